"""Effective coefficients and the homogenization-rate experiments.

The Dirichlet solves reuse the corrector module's flux-form stencil with
boundary nodes pinned to the data, so the oscillating and homogenized
problems live in one discretization family.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dstn, idstn

from . import corrector as corr
from .corrector import EllipticOperator, GridField, PeriodicGrid, solve_corrector, solve_operator
from .field import as_mode_field
from .sampling import mode_values


@dataclass
class EffectiveMatrix:
    abar: np.ndarray
    residuals: tuple  # per-direction solver residuals
    eps: float
    grid: PeriodicGrid

    def eig_range(self):
        sym = 0.5 * (self.abar + self.abar.T)
        w = np.linalg.eigvalsh(sym)
        return float(w.min()), float(w.max())


def effective_matrix(field, eps, grid, tol=1e-10):
    """abar e_j = grid mean of a(x)(e_j + grad phi_{eps, e_j}).

    Diagonal flux components are averaged over their face lattices (the
    same sampling the operator uses), so in 1d the result is the discrete
    harmonic mean up to the eps-regularization error.
    """
    d = grid.d
    op = EllipticOperator(field, grid, eps)
    h = grid.h
    abar = np.zeros((d, d))
    residuals = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        b = op.rhs(e)
        x, iters, rel, _ = solve_operator(op, b, tol)
        residuals.append(rel)
        for l in range(d):
            dplus = (np.roll(x, -1, axis=l) - x) / h
            col = float((op.diag_faces[l] * (e[l] + dplus)).mean())
            for (i_, j_), coef in op.cross.items():
                if i_ == l:
                    grad_c = (np.roll(x, -1, axis=j_) - np.roll(x, 1, axis=j_)) / (2.0 * h)
                    col += float((coef * (e[j_] + grad_c)).mean())
            abar[l, j] = col
    return EffectiveMatrix(abar=abar, residuals=tuple(residuals), eps=float(eps), grid=grid)


# ---------------------------------------------------------------------------
# Dirichlet problem on the unit box


class DirichletOperator:
    """-div(a(x/eps) grad u) on [0,1]^d, nodes pinned to g on the boundary.

    values live on the (n+1)^d node array; the operator acts on interior
    nodes through the same face-centered flux stencil as the periodic one.
    abar=None samples the oscillating coefficient; a constant matrix gives
    the homogenized operator in the same family.
    """

    def __init__(self, field, n, eps=None, constant=None):
        self.n = int(n)
        self.h = 1.0 / n
        if constant is not None:
            self.d = constant.shape[0]
            self.constant = np.atleast_2d(constant)
            self.modes = None
        else:
            self.modes = as_mode_field(field)
            self.d = self.modes.winding.d if self.modes.value_shape else 1
            self.constant = None
        self.eps = eps
        self.diag_faces = []
        for j in range(self.d):
            self.diag_faces.append(self._sample_entry(j, j, face_axis=j))
        self.cross = {}
        if self.constant is not None:
            pairs = [(i, j) for i in range(self.d) for j in range(self.d)
                     if i != j and abs(self.constant[i, j]) > 1e-15]
        elif self.modes.value_shape:
            pairs = [(i, j) for i in range(self.d) for j in range(self.d)
                     if i != j and np.abs(self.modes.amps[:, i, j]).max() > 1e-15]
        else:
            pairs = []
        for (i, j) in pairs:
            self.cross[(i, j)] = self._sample_entry(i, j, face_axis=None)

    def _axis_coords(self, face_axis):
        coords = []
        for j in range(self.d):
            ax = np.arange(self.n + 1) * self.h
            if face_axis == j:
                ax = (ax + 0.5 * self.h)[:-1]
            coords.append(ax)
        return coords

    def _sample_entry(self, i, j, face_axis):
        coords = self._axis_coords(face_axis)
        shape = tuple(len(c) for c in coords)
        if self.constant is not None:
            return np.full(shape, self.constant[i, j])
        grids = np.meshgrid(*coords, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1) / self.eps
        amps = self.modes.amps[:, i, j] if self.modes.value_shape else self.modes.amps
        return mode_values(self.modes.frequencies, amps, pts).reshape(shape)

    def apply_full(self, v):
        """Flux-form stencil on the full node array; meaningful on interior nodes."""
        h = self.h
        out = np.zeros_like(v)
        for j in range(self.d):
            dplus = np.diff(v, axis=j) / h  # lives on the n faces along axis j
            flux = self.diag_faces[j] * dplus
            dminus = np.diff(flux, axis=j) / h  # interior nodes along axis j
            sl = [slice(None)] * self.d
            sl[j] = slice(1, self.n)
            out[tuple(sl)] -= dminus
        for (i, j), coef in self.cross.items():
            grad = np.gradient(v, h, axis=j)
            w = coef * grad
            gi = np.gradient(w, h, axis=i)
            core = tuple(slice(1, self.n) for _ in range(self.d))
            out[core] -= gi[core]
        return out

    def interior(self, v):
        return v[tuple(slice(1, self.n) for _ in range(self.d))]

    def embed(self, interior):
        full = np.zeros((self.n + 1,) * self.d)
        full[tuple(slice(1, self.n) for _ in range(self.d))] = interior
        return full

    def apply(self, interior):
        return self.interior(self.apply_full(self.embed(interior)))

    def solve(self, g_values, tol=1e-10, max_iters=None):
        """Solve with boundary nodes pinned to g_values (full node array)."""
        bdry = g_values.copy()
        bdry[tuple(slice(1, self.n) for _ in range(self.d))] = 0.0
        b = -self.interior(self.apply_full(bdry))
        pre = self._dst_preconditioner()
        op = _InteriorOp(self)
        x, iters, rel, _ = corr._pcg(op, b, tol, max_iters or 50 * self.n, pre)
        full = self.embed(x) + bdry
        return full, iters, rel

    def _dst_preconditioner(self):
        c = float(np.mean([f.mean() for f in self.diag_faces]))
        k = np.arange(1, self.n)
        lam1 = (4.0 / self.h ** 2) * np.sin(np.pi * k / (2.0 * self.n)) ** 2
        lam = lam1
        for _ in range(self.d - 1):
            lam = lam[..., None] + lam1
        denom = c * lam

        def apply_inv(r):
            coef = dstn(r, type=1)
            return idstn(coef / denom, type=1)

        return apply_inv


class _InteriorOp:
    def __init__(self, dop):
        self.dop = dop
        self.grid = type("G", (), {"n": dop.n})()

    def apply(self, v):
        return self.dop.apply(v)


def _node_points(n, d):
    ax = np.arange(n + 1) / n
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass
class RateReport:
    rows: list  # (eps, h, err_Linf, slope_so_far)
    slope: float
    degenerate: bool
    under_resolved: list  # eps values with h > eps/8


def dirichlet_rate(field, g, eps_list, n, tol=1e-10, abar=None):
    """Solve the oscillating and homogenized Dirichlet problems on [0,1]^d
    for each eps and report the L^inf error decay against eps.

    g maps node points (N, d) -> (N,); polynomial data of degree <= 2 is
    the intended use.  abar defaults to effective_matrix on an auto-sized
    periodic cell.
    """
    modes = as_mode_field(field)
    d = modes.winding.d
    if d not in (1, 2):
        raise ValueError("rate experiment supports d in {1, 2}")
    if abar is None:
        eps0 = 1.0 / 64.0 if d == 1 else 1.0 / 16.0
        cell = PeriodicGrid(d, 8.0 / eps0, int(8.0 / eps0 * 16))
        abar = effective_matrix(field, eps0, cell, tol).abar
    abar = np.atleast_2d(abar)
    pts = _node_points(n, d)
    g_vals = np.asarray(g(pts), dtype=float).reshape((n + 1,) * d)
    hom_op = DirichletOperator(None, n, constant=abar)
    u_hom, _, _ = hom_op.solve(g_vals, tol)
    rows = []
    under = []
    errs = []
    h = 1.0 / n
    for eps in eps_list:
        if h > eps / 8.0:
            under.append(float(eps))
        osc_op = DirichletOperator(field, n, eps=eps)
        u_eps, _, _ = osc_op.solve(g_vals, tol)
        err = float(np.abs(u_eps - u_hom).max())
        errs.append(err)
        if len(errs) >= 2 and max(errs) > 1e-12:
            slope = float(np.polyfit(np.log([float(v) for v in eps_list[:len(errs)]]),
                                     np.log(np.maximum(errs, 1e-300)), 1)[0])
        else:
            slope = float("nan")
        rows.append((float(eps), h, err, slope))
    degenerate = max(errs) <= 1e-12
    slope = rows[-1][3] if not degenerate else float("nan")
    return RateReport(rows=rows, slope=slope, degenerate=degenerate, under_resolved=under)


def solve_dirichlet(field, g, eps, n, tol=1e-10):
    """One oscillating Dirichlet solve; returns the full node array."""
    pts = _node_points(n, as_mode_field(field).winding.d)
    g_vals = np.asarray(g(pts), dtype=float).reshape((n + 1,) * as_mode_field(field).winding.d)
    op = DirichletOperator(field, n, eps=eps)
    u, _, _ = op.solve(g_vals, tol)
    return u


# ---------------------------------------------------------------------------
# two-scale expansion error


def _periodic_interp(phi, q):
    """Linear interpolation of a periodic GridField at physical points q (N, d)."""
    grid = phi.grid
    u = (np.asarray(q, dtype=float) / grid.h) % grid.n
    i0 = np.floor(u).astype(int)
    frac = u - i0
    if grid.d == 1:
        a = phi.values[i0[:, 0] % grid.n]
        b = phi.values[(i0[:, 0] + 1) % grid.n]
        return a * (1 - frac[:, 0]) + b * frac[:, 0]
    if grid.d == 2:
        i = i0[:, 0] % grid.n
        j = i0[:, 1] % grid.n
        ip = (i + 1) % grid.n
        jp = (j + 1) % grid.n
        fx, fy = frac[:, 0], frac[:, 1]
        v = phi.values
        return (v[i, j] * (1 - fx) * (1 - fy) + v[ip, j] * fx * (1 - fy)
                + v[i, jp] * (1 - fx) * fy + v[ip, jp] * fx * fy)
    raise ValueError("interpolation implemented for d <= 2")


def two_scale_error(u_eps, u_hom, Phi, eps, margin=0.1, p=2):
    """W^{1,p} norm on the interior box V = [margin, 1-margin]^d of

        u_eps - u_hom - eps * grad(u_hom) . Phi(x / eps),

    with grad(u_hom) by centered differences and Phi sampled by periodic
    interpolation of the corrector grid fields."""
    if margin < 0.1 - 1e-12:
        raise ValueError("interior margin must be >= 0.1 (away from boundary layers)")
    u_eps = np.asarray(u_eps, dtype=float)
    u_hom = np.asarray(u_hom, dtype=float)
    d = u_eps.ndim
    n = u_eps.shape[0] - 1
    h = 1.0 / n
    pts = _node_points(n, d)
    w = u_eps - u_hom
    for j in range(d):
        du = np.gradient(u_hom, h, axis=j)
        phi_vals = _periodic_interp(Phi[j], pts / eps).reshape(u_eps.shape)
        w = w - eps * du * phi_vals
    mask_ax = (np.arange(n + 1) * h >= margin - 1e-12) & (np.arange(n + 1) * h <= 1 - margin + 1e-12)
    mask = mask_ax
    for _ in range(d - 1):
        mask = mask[..., None] & mask_ax
    grads = [np.gradient(w, h, axis=j)[mask] for j in range(d)]
    wm = w[mask]
    total = (np.abs(wm) ** p).sum() * h ** d
    for gcomp in grads:
        total += (np.abs(gcomp) ** p).sum() * h ** d
    return float(total ** (1.0 / p))
