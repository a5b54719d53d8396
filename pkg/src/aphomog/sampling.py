"""Lattice sampling helpers for sup/inf searches on tori and balls.

Everything here is deterministic: lattices are fixed given the resolution
knobs, reductions run in numpy's native (fixed) order, and the refinement
loops use fixed iteration counts.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

GOLDEN_RATIO = (1.0 + np.sqrt(5.0)) / 2.0
_INVPHI = 2.0 / (1.0 + np.sqrt(5.0))


@dataclass(frozen=True)
class SupSampler:
    """Resolution knobs for sampled sup/inf searches.

    base_res is the torus lattice resolution per dimension at difference
    order 0; it doubles with each applied difference (sharper features),
    capped so the total lattice never exceeds max_points.  y_res controls
    the outer sup_y lattice of nested searches, z_res the coarse lattice
    step R/z_res for the inf over B_R, gs_iters the golden-section
    refinement around the coarse argmin.
    """

    base_res: int = 64
    max_points: int = 1 << 18
    refine_rounds: int = 3
    refine_res: int = 9
    y_res: int = 16
    z_res: int = 64
    gs_iters: int = 40
    omega_res: int = 32  # torus lattice per dim for the sup over z' in omega
    omega_quad_res: int = 32  # midpoint quadrature per dim over the unit ball

    def torus_res(self, m, order=0):
        res = self.base_res << max(int(order), 0)
        cap = max(2, int(self.max_points ** (1.0 / m)))
        return max(2, min(res, cap))

    def y_lattice(self, m):
        return torus_lattice(m, max(2, min(self.y_res, int(self.max_points ** (1.0 / m)))))


@lru_cache(maxsize=64)
def _torus_lattice_cached(m, res):
    axes = [np.arange(res) / res] * m
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


def torus_lattice(m, res):
    """Uniform lattice on T^m with res points per dimension, shape (res^m, m)."""
    return _torus_lattice_cached(int(m), int(res))


def ball_lattice(d, R, z_res):
    """Lattice of step R/z_res on [-R, R]^d, restricted to the closed ball |z| <= R."""
    step = R / z_res
    axis = np.arange(-z_res, z_res + 1) * step
    if d == 1:
        return axis[:, None]
    grid = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grid], axis=-1)
    return pts[np.linalg.norm(pts, axis=1) <= R + 1e-12]


def mode_values(ks_or_freqs, amps, points):
    """Evaluate Re(sum_k W_k e^{2 pi i theta_k}) at theta = points @ ks.T.

    amps has shape (K, *value_shape); returns (N, *value_shape).
    """
    theta = 2.0 * np.pi * (points @ ks_or_freqs.T)
    flat = amps.reshape(amps.shape[0], -1)
    vals = np.cos(theta) @ flat.real - np.sin(theta) @ flat.imag
    return vals.reshape(points.shape[0], *amps.shape[1:])


def _zoom(objective, m, start, cell, rounds, res):
    """Local lattice ascent for a scalar objective on T^m around `start`."""
    best_x = start
    best_v = objective(start[None, :])[0]
    half = cell
    for _ in range(rounds):
        offs = np.linspace(-half, half, res)
        grid = np.meshgrid(*([offs] * m), indexing="ij")
        pts = best_x + np.stack([g.ravel() for g in grid], axis=-1)
        vals = objective(pts)
        i = int(np.argmax(vals))
        if vals[i] > best_v:
            best_v = vals[i]
            best_x = pts[i]
        half *= 2.0 / (res - 1)
    return best_v


def lattice_max(objective, m, res, refine_rounds=3, refine_res=9):
    """max of objective over T^m: lattice scan plus local zoom refinement."""
    pts = torus_lattice(m, res)
    vals = objective(pts)
    i = int(np.argmax(vals))
    if refine_rounds <= 0:
        return float(vals[i])
    return float(_zoom(objective, m, pts[i], 1.0 / res, refine_rounds, refine_res))


def golden_section_min(objective, lo, hi, iters):
    """Vectorized golden-section minimization on per-element brackets.

    objective maps an array of query points (batch,) to values (batch,);
    lo/hi are arrays of bracket endpoints.  Both probes are re-evaluated
    each iteration (objective calls are batched, so clarity beats the
    factor-two saving of the classic bookkeeping).  Returns (argmin, min).
    """
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    for _ in range(iters):
        x1 = hi - _INVPHI * (hi - lo)
        x2 = lo + _INVPHI * (hi - lo)
        f1 = objective(x1)
        f2 = objective(x2)
        take1 = f1 <= f2  # minimum lies in [lo, x2]
        hi = np.where(take1, x2, hi)
        lo = np.where(take1, lo, x1)
    xm = 0.5 * (lo + hi)
    return xm, objective(xm)
