"""Quasiperiodic coefficient fields and their non-resonance diagnostics.

A quasiperiodic field is f(x) = F(Mx) with F a finite real trigonometric
polynomial on the torus T^m and M the (m x d) winding matrix lifting
physical space into the torus.  All fields are stored in closed form as
complex mode amplitudes: translations and differences act as exact phase
rotations on the amplitudes, so nested difference operators never suffer
numerical cancellation.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .sampling import SupSampler, ball_lattice, golden_section_min, lattice_max, mode_values, torus_lattice


class ResonantWindingError(ValueError):
    """The winding matrix admits an integer resonance; torus sampling is invalid."""


class EllipticityError(ValueError):
    """A coefficient field violates the ellipticity window [1, Lambda]."""


# ---------------------------------------------------------------------------
# winding matrices


class WindingMatrix:
    """The linear map M: R^d -> R^m lifting physical space onto the torus."""

    def __init__(self, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if not np.all(np.isfinite(rows)):
            raise ValueError("winding matrix entries must be finite")
        m, d = rows.shape
        if m < d:
            raise ValueError(f"torus dimension m={m} must be >= physical dimension d={d}")
        if np.linalg.svd(rows, compute_uv=False).min() <= 1e-12:
            raise ValueError("winding matrix must have full column rank")
        self.rows = rows
        self.m = m
        self.d = d

    def lift(self, x):
        """alpha = M x; x may be a point (d,) or a batch (N, d)."""
        x = np.asarray(x, dtype=float)
        return x @ self.rows.T

    def resonant_vector(self, z_max=12, tol=1e-10):
        """Smallest integer z != 0 with M^t z = 0 within tol, or None.

        A resonance means the orbit {Mx mod 1} is not dense in T^m, so
        torus-lattice sups do not approximate sups over R^d.
        """
        axis = np.arange(-z_max, z_max + 1)
        grids = np.meshgrid(*([axis] * self.m), indexing="ij")
        zs = np.stack([g.ravel() for g in grids], axis=-1)
        zs = zs[np.any(zs != 0, axis=1)]
        proj = np.abs(zs @ self.rows).max(axis=1)
        hits = np.where(proj < tol)[0]
        if hits.size == 0:
            return None
        best = hits[np.argmin(np.abs(zs[hits]).sum(axis=1))]
        return zs[best].copy()

    def require_nonresonant(self, z_max=12):
        z = self.resonant_vector(z_max=z_max)
        if z is not None:
            raise ResonantWindingError(f"winding matrix is resonant: M^t z = 0 for z = {z.tolist()}")


# ---------------------------------------------------------------------------
# trigonometric polynomials on the torus


class TrigPolynomial:
    """F(alpha) = sum_j [c_j cos(2 pi k_j . alpha) + s_j sin(2 pi k_j . alpha)].

    Stored as complex amplitudes W_j = c_j - i s_j against distinct integer
    frequency vectors k_j in Z^m, so that F = Re(sum W_j e^{2 pi i k_j . alpha}).
    """

    def __init__(self, m, ks, amps):
        self.m = int(m)
        self.ks = np.atleast_2d(np.asarray(ks, dtype=int))
        self.amps = np.asarray(amps, dtype=complex)
        if self.ks.shape[0] != self.amps.shape[0] or self.ks.shape[1] != self.m:
            raise ValueError("frequency/amplitude shapes disagree")
        keys = {tuple(k) for k in self.ks}
        if len(keys) != self.ks.shape[0]:
            raise ValueError("frequency vectors must be distinct")

    @classmethod
    def from_terms(cls, m, terms):
        """terms: iterable of (k_vector, c, s)."""
        ks, amps = [], []
        for k, c, s in terms:
            ks.append(np.asarray(k, dtype=int))
            amps.append(complex(c) - 1j * complex(s))
        if not ks:
            ks, amps = [np.zeros(m, dtype=int)], [0.0 + 0.0j]
        return cls(m, np.stack(ks), np.asarray(amps))

    @classmethod
    def constant(cls, m, value):
        return cls(m, np.zeros((1, m), dtype=int), np.asarray([value], dtype=complex))

    @property
    def terms(self):
        return [(k.copy(), w.real, -w.imag) for k, w in zip(self.ks, self.amps)]

    def eval(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        single = alpha.ndim == 1
        vals = mode_values(self.ks, self.amps, np.atleast_2d(alpha))
        return float(vals[0]) if single else vals

    def derivative_norm_bound(self, j):
        """Coefficient-sum bound sum (|c|+|s|) (2 pi |k|_1)^j >= sup of any
        order-j mixed partial of F (exact only for single modes)."""
        if j < 0:
            raise ValueError("derivative order must be >= 0")
        weight = (2.0 * np.pi * np.abs(self.ks).sum(axis=1)) ** j
        return float(((np.abs(self.amps.real) + np.abs(self.amps.imag)) * weight).sum())

    def tail_bound(self, m_cut):
        """sum of |c|+|s| over terms with a nonzero frequency entry beyond m_cut."""
        if not 0 <= m_cut <= self.m:
            raise ValueError("m_cut out of range")
        tail = np.any(self.ks[:, m_cut:] != 0, axis=1)
        mass = np.abs(self.amps.real) + np.abs(self.amps.imag)
        return float(mass[tail].sum())


def lifted_eval(F, alpha):
    """Evaluate the lifted function F at a torus point (periodic in each coordinate)."""
    return F.eval(alpha)


def derivative_norm_bound(F, j):
    return F.derivative_norm_bound(j)


def chi_m(F, m_cut):
    """Upper bound for sup |F(x) - F(P_m x)|: the coefficient mass of the
    terms depending on torus coordinates beyond index m_cut."""
    return F.tail_bound(m_cut)


# ---------------------------------------------------------------------------
# quasiperiodic fields in physical space


class FrequencyField:
    """f(x) = Re sum_k W_k e^{2 pi i k . M x}, scalar- or matrix-valued.

    The physical frequencies are xi_k = M^t k.  `order` counts how many
    difference operators have been applied; sup sampling doubles its torus
    resolution per order.
    """

    def __init__(self, winding, ks, amps, order=0):
        self.winding = winding
        self.ks = np.atleast_2d(np.asarray(ks, dtype=float))
        self.amps = np.asarray(amps, dtype=complex)
        self.order = int(order)
        if self.ks.shape[0] != self.amps.shape[0]:
            raise ValueError("mode/amplitude counts disagree")
        if self.ks.shape[1] != winding.m:
            raise ValueError("mode vectors must live in Z^m")

    @classmethod
    def from_trig(cls, winding, poly, shift=0.0):
        ks = poly.ks.astype(float)
        amps = poly.amps.copy()
        zero = np.where(~np.any(ks != 0, axis=1))[0]
        if shift:
            if zero.size:
                amps[zero[0]] += shift
            else:
                ks = np.vstack([np.zeros((1, winding.m)), ks])
                amps = np.concatenate([[complex(shift)], amps])
        return cls(winding, ks, amps)

    @classmethod
    def from_frequencies(cls, freqs, cos_amps, sin_amps=None, mean=0.0):
        """Build from raw physical frequencies (assumed rationally independent):
        each mode gets its own torus coordinate, M has the frequencies as rows."""
        freqs = np.atleast_2d(np.asarray(freqs, dtype=float))
        n, d = freqs.shape
        if sin_amps is None:
            sin_amps = np.zeros(n)
        winding = WindingMatrix(freqs) if n >= d else WindingMatrix(np.vstack([freqs, np.eye(d)[n:]]))
        m = winding.m
        ks = np.zeros((n + 1, m))
        ks[1:, :n] = np.eye(n)
        amps = np.concatenate([[complex(mean)], np.asarray(cos_amps, dtype=float) - 1j * np.asarray(sin_amps, dtype=float)])
        return cls(winding, ks, amps)

    @property
    def value_shape(self):
        return self.amps.shape[1:]

    @property
    def frequencies(self):
        """Physical frequencies xi = M^t k, shape (K, d)."""
        return self.ks @ self.winding.rows

    @property
    def mean(self):
        zero = ~np.any(self.ks != 0, axis=1)
        if not zero.any():
            return np.zeros(self.value_shape) if self.value_shape else 0.0
        total = self.amps[zero].real.sum(axis=0)
        return total if self.value_shape else float(total)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1
        pts = np.atleast_2d(x)
        vals = mode_values(self.frequencies, self.amps, pts)
        if single:
            out = vals[0]
            return float(out) if out.ndim == 0 else out
        return vals

    def _phases(self, beta):
        return np.exp(2j * np.pi * (self.ks @ np.asarray(beta, dtype=float)))

    def translated_lift(self, beta):
        """Translation acting through the torus: amplitudes rotate by e^{2 pi i k . beta}."""
        ph = self._phases(beta)
        return FrequencyField(self.winding, self.ks, self.amps * ph.reshape((-1,) + (1,) * len(self.value_shape)), self.order)

    def translated(self, w):
        return self.translated_lift(self.winding.lift(np.asarray(w, dtype=float)))

    def differenced_lift(self, beta_y, beta_z):
        """Closed-form Delta acting through torus points beta_y, beta_z."""
        ph = 0.5 * (self._phases(beta_y) - self._phases(beta_z))
        amps = self.amps * ph.reshape((-1,) + (1,) * len(self.value_shape))
        return FrequencyField(self.winding, self.ks, amps, self.order + 1)

    def differenced(self, y, z):
        return self.differenced_lift(self.winding.lift(np.asarray(y, dtype=float)),
                                     self.winding.lift(np.asarray(z, dtype=float)))

    def torus_values(self, alphas):
        return mode_values(self.ks, self.amps, alphas)

    def sup_norm(self, sampler=None):
        """Sampled sup_x |f(x)| via the torus lift (requires a non-resonant winding).

        For matrix values the pointwise norm is the max-abs entry.  The
        sampled value is a lower bound of the true sup.
        """
        sampler = sampler or SupSampler()
        res = sampler.torus_res(self.winding.m, self.order)

        def objective(pts):
            vals = np.abs(self.torus_values(pts))
            return vals.reshape(pts.shape[0], -1).max(axis=1)

        return lattice_max(objective, self.winding.m, res,
                           sampler.refine_rounds, sampler.refine_res)

    def scalar(self):
        if self.value_shape:
            raise ValueError("field is not scalar-valued")
        return self


def as_mode_field(f):
    """Coerce a CoefficientField or FrequencyField to its mode representation."""
    if isinstance(f, FrequencyField):
        return f
    if isinstance(f, CoefficientField):
        return f.modes
    raise TypeError(f"not an evaluable quasiperiodic field: {type(f)!r}")


# ---------------------------------------------------------------------------
# matrix-valued coefficient fields a(x) = shift + F(Mx)


class CoefficientField:
    """Uniformly elliptic d x d quasiperiodic coefficient field.

    entries maps (i, j) to the TrigPolynomial of a_ij minus its constant
    shift; all entries share the winding matrix.  Construction validates
    the ellipticity window xi . a(x) xi >= |xi|^2, |a(x)| <= Lambda on a
    torus lattice and fails hard on violation.
    """

    def __init__(self, winding, shift, entries, Lambda, holder=None, kappa=3.0, validate=True):
        self.winding = winding
        self.shift = np.atleast_2d(np.asarray(shift, dtype=float))
        d = self.shift.shape[0]
        if self.shift.shape != (d, d) or d != winding.d:
            raise ValueError("shift must be d x d with d matching the winding matrix")
        self.d = d
        self.entries = dict(entries)
        for (i, j), poly in self.entries.items():
            if not (0 <= i < d and 0 <= j < d):
                raise ValueError(f"entry index {(i, j)} out of range for d={d}")
            if poly.m != winding.m:
                raise ValueError("entry polynomial lives on the wrong torus")
        self.Lambda = float(Lambda)
        self.kappa = float(kappa)
        self.modes = self._build_modes()
        self.holder = holder if holder is not None else (1.0, self._lipschitz_bound())
        if validate:
            self._validate()

    def _build_modes(self):
        key_to_row = {}
        rows = []
        for (i, j), poly in self.entries.items():
            for k in poly.ks:
                key = tuple(int(v) for v in k)
                if key not in key_to_row:
                    key_to_row[key] = len(rows)
                    rows.append(key)
        zero = tuple([0] * self.winding.m)
        if zero not in key_to_row:
            key_to_row[zero] = len(rows)
            rows.append(zero)
        ks = np.asarray(rows, dtype=float)
        amps = np.zeros((len(rows), self.d, self.d), dtype=complex)
        for (i, j), poly in self.entries.items():
            for k, w in zip(poly.ks, poly.amps):
                amps[key_to_row[tuple(int(v) for v in k)], i, j] += w
        amps[key_to_row[zero]] += self.shift
        return FrequencyField(self.winding, ks, amps)

    def _lipschitz_bound(self):
        freqs = self.modes.frequencies
        mass = np.abs(self.modes.amps.real) + np.abs(self.modes.amps.imag)
        per_mode = mass.reshape(mass.shape[0], -1).max(axis=1)
        return float((per_mode * 2.0 * np.pi * np.linalg.norm(freqs, axis=1)).sum())

    def _validate(self, res_budget=1 << 14, tol=1e-9):
        m = self.winding.m
        res = max(8, int(res_budget ** (1.0 / m)))
        alphas = torus_lattice(m, res)
        vals = self.modes.torus_values(alphas)
        sym = 0.5 * (vals + np.swapaxes(vals, 1, 2))
        eigmin = np.linalg.eigvalsh(sym)[:, 0].min()
        if eigmin < 1.0 - tol:
            raise EllipticityError(f"ellipticity lower bound violated: min eigenvalue {eigmin:.6g} < 1")
        opnorm = np.linalg.svd(vals, compute_uv=False).max()
        if opnorm > self.Lambda + tol:
            raise EllipticityError(f"upper bound violated: |a| reaches {opnorm:.6g} > Lambda={self.Lambda:.6g}")

    def eval(self, x):
        return self.modes.eval(x)

    def entry_field(self, i, j):
        poly = self.entries.get((i, j))
        if poly is None:
            poly = TrigPolynomial.constant(self.winding.m, 0.0)
        return FrequencyField.from_trig(self.winding, poly, shift=self.shift[i, j])

    @property
    def is_symmetric(self):
        diff = self.modes.amps - np.swapaxes(self.modes.amps, 1, 2)
        return bool(np.abs(diff).max() < 1e-12)

    def translated(self, w):
        beta = self.winding.lift(np.asarray(w, dtype=float))
        out = CoefficientField.__new__(CoefficientField)
        out.winding = self.winding
        out.shift = self.shift
        out.d = self.d
        out.entries = self.entries
        out.Lambda = self.Lambda
        out.kappa = self.kappa
        out.holder = self.holder
        out.modes = self.modes.translated_lift(beta)
        return out


def eval_field(field, x):
    """a(x) = shift + F(Mx); total on finite input."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation point must be finite")
    return field.eval(x)


# ---------------------------------------------------------------------------
# Diophantine constants and the discrepancy sigma(M, R)


@dataclass(frozen=True)
class DiophantineReport:
    theta: float
    A_est: float
    Z_max: int
    argmin_z: tuple


@dataclass(frozen=True)
class RhoEstimate:
    """A sampled sup/inf estimate with its resolutions and bound direction.

    Sampled sups are lower bounds of the true sup and sampled infs upper
    bounds of the true inf, so composite estimates are 'two-sided-unresolved'.
    """

    kind: str
    k: int
    R: float
    value: float
    res_y: int
    res_z: int
    direction: str = "two-sided-unresolved"
    extra: dict = dataclass_field(default_factory=dict)

    def row(self):
        return (self.kind, self.k, self.R, self.value, self.res_y, self.res_z, self.direction)


def diophantine_constant(M, theta, Z_max):
    """Exhaustive search of A_est = min over 0 < |z|_inf <= Z_max, i <= d of
    |e_i . M^t z| |z|^theta.  An upper bound for the true Diophantine A."""
    if theta <= 0:
        raise ValueError("theta must be > 0")
    if Z_max < 1:
        raise ValueError("Z_max must be >= 1")
    axis = np.arange(-Z_max, Z_max + 1)
    grids = np.meshgrid(*([axis] * M.m), indexing="ij")
    zs = np.stack([g.ravel() for g in grids], axis=-1)
    zs = zs[np.any(zs != 0, axis=1)]
    comp = np.abs(zs @ M.rows)  # |e_i . M^t z| for each i
    min_comp = comp.min(axis=1)
    if min_comp.min() < 1e-12:
        z_bad = zs[int(np.argmin(min_comp))]
        raise ResonantWindingError(
            f"matrix is resonant: e_i . M^t z vanishes for z = {z_bad.tolist()}")
    scores = min_comp * np.linalg.norm(zs, axis=1) ** theta
    best = int(np.argmin(scores))
    return DiophantineReport(theta=float(theta), A_est=float(scores[best]),
                             Z_max=int(Z_max), argmin_z=tuple(int(v) for v in zs[best]))


def _torus_dist(a):
    """Distance of each coordinate to the nearest integer, folded to [0, 1/2]."""
    frac = a - np.floor(a)
    return np.minimum(frac, 1.0 - frac)


def sigma(M, R, n_y=64, n_z=64, gs_iters=40):
    """Sampled discrepancy sup_y inf_{z in B_R} ||My - Mz||_inf (mod 1).

    The sup runs over a uniform torus lattice (the orbit {My mod 1} is dense
    for non-resonant M), the inf over a coarse lattice of step R/n_z in B_R
    followed by a golden-section refinement pass along each axis.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if n_y < 2 or n_z < 2:
        raise ValueError("need at least 2 samples per dimension")
    M.require_nonresonant()
    alphas = torus_lattice(M.m, n_y)  # (Ny, m) lattice of torus targets
    zs = ball_lattice(M.d, R, n_z)  # (Nz, d)
    beta_z = M.lift(zs)  # (Nz, m)

    # distance(y, z) = max_i dist_T((alpha_y - M z)_i); coarse scan
    dists = _torus_dist(alphas[:, None, :] - beta_z[None, :, :]).max(axis=2)
    best_idx = np.argmin(dists, axis=1)
    best_val = dists[np.arange(len(alphas)), best_idx]
    best_z = zs[best_idx]

    # one golden-section refinement pass per axis, vectorized over all y
    step = R / n_z
    cur = best_z.copy()
    for axis in range(M.d):
        def obj(coord):
            pts = cur.copy()
            pts[:, axis] = coord
            return _torus_dist(alphas - M.lift(pts)).max(axis=1)

        lo = cur[:, axis] - step
        hi = cur[:, axis] + step
        xb, fb = golden_section_min(obj, lo, hi, gs_iters)
        improved = fb < best_val
        cur[improved, axis] = xb[improved]
        best_val = np.where(improved, fb, best_val)

    return RhoEstimate(kind="sigma", k=0, R=float(R), value=float(best_val.max()),
                       res_y=int(n_y), res_z=int(n_z))


# ---------------------------------------------------------------------------
# TOML field specifications

try:
    import tomllib as _toml
except ModuleNotFoundError:  # python < 3.11
    import tomli as _toml


def load_field_spec(path):
    """Load a coefficient field from a TOML spec; rejects non-elliptic fields.

    Schema: [winding] rows = [[...]] (m x d); top-level lambda (required),
    theta/kappa/gamma (optional); [[entry]] blocks with 0-based i, j, shift
    and terms = [[k_1..k_m, c, s], ...].
    """
    with open(path, "rb") as fh:
        raw = _toml.load(fh)
    return field_from_dict(raw)


def field_from_dict(raw):
    winding = WindingMatrix(raw["winding"]["rows"])
    d, m = winding.d, winding.m
    shift = np.zeros((d, d))
    entries = {}
    seen = set()
    for ent in raw.get("entry", []):
        i, j = int(ent["i"]), int(ent["j"])
        if (i, j) in seen:
            raise ValueError(f"duplicate entry ({i}, {j}) in field spec")
        seen.add((i, j))
        shift[i, j] = float(ent.get("shift", 0.0))
        terms = []
        for row in ent.get("terms", []):
            if len(row) != m + 2:
                raise ValueError(f"term row needs {m} frequencies plus c, s: {row}")
            terms.append((np.asarray(row[:m], dtype=float).astype(int), row[m], row[m + 1]))
        if terms:
            entries[(i, j)] = TrigPolynomial.from_terms(m, terms)
    Lambda = float(raw["lambda"])
    holder = None
    if "gamma" in raw and "K" in raw:
        holder = (float(raw["gamma"]), float(raw["K"]))
    fld = CoefficientField(winding, shift, entries, Lambda,
                           holder=holder, kappa=float(raw.get("kappa", 3.0)))
    fld.theta = float(raw.get("theta", 1.0))
    return fld
