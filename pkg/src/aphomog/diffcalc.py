"""Iterated difference calculus and the almost-periodicity moduli.

Implements the translation/difference operators, the partition
combinatorics behind the G_k maxima and the F_k recursion, and the
sampled nested sup/inf searches defining rho_k, rho_*, and omega_k.

Difference operators act on closed-form mode amplitudes (phase shifts),
so iterated differences are exact; only the sup/inf searches and the
sup-norm lattice sampling are approximate.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .field import FrequencyField, RhoEstimate, as_mode_field
from .sampling import SupSampler, ball_lattice, golden_section_min, torus_lattice

MAX_COMBINATORIAL_K = 6  # partition enumeration guard (families grow like C(k^2, k))
MAX_SEARCH_K = 4  # nested sup/inf guard (cost is O(n_y n_z)^k)


class SearchGuardError(ValueError):
    """Requested order exceeds the configured combinatorial/search guards."""


# ---------------------------------------------------------------------------
# translation tuples and partition combinatorics


class TranslationTuple:
    """The k-tuple T_k = ((y_1, z_1), ..., (y_k, z_k)) of translation pairs."""

    def __init__(self, pairs):
        pairs = [(np.atleast_1d(np.asarray(y, dtype=float)),
                  np.atleast_1d(np.asarray(z, dtype=float))) for y, z in pairs]
        if not pairs:
            raise ValueError("a translation tuple needs at least one pair")
        self.ys = np.stack([y for y, _ in pairs])
        self.zs = np.stack([z for _, z in pairs])
        if not (np.all(np.isfinite(self.ys)) and np.all(np.isfinite(self.zs))):
            raise ValueError("translation entries must be finite")

    @property
    def k(self):
        return self.ys.shape[0]

    def pair(self, i):
        return self.ys[i], self.zs[i]

    def subset(self, indices):
        return TranslationTuple([(self.ys[i - 1], self.zs[i - 1]) for i in indices])

    def __len__(self):
        return self.k


def _as_tuple(T):
    return T if isinstance(T, TranslationTuple) else TranslationTuple(T)


@dataclass(frozen=True)
class PartitionIndex:
    """A strictly increasing subset zeta of {1, ..., k} (1-based, possibly empty)."""

    zeta: tuple
    k: int

    def __post_init__(self):
        if any(a >= b for a, b in zip(self.zeta, self.zeta[1:])):
            raise ValueError("indices must be strictly increasing")
        if self.zeta and not (1 <= self.zeta[0] and self.zeta[-1] <= self.k):
            raise ValueError("indices out of range")

    @property
    def complement(self):
        zc = tuple(i for i in range(1, self.k + 1) if i not in self.zeta)
        return PartitionIndex(zc, self.k)

    def __len__(self):
        return len(self.zeta)


def partitions(j, k):
    """All C(k, j) increasing ordered subsets of {1..k} with j members; j=0
    yields the single empty subset."""
    if not 0 <= j <= k:
        raise ValueError("need 0 <= j <= k")
    return [PartitionIndex(tuple(c), k) for c in itertools.combinations(range(1, k + 1), j)]


def partition_families(k, limit=MAX_COMBINATORIAL_K):
    """Lazily enumerate k-tuples (zeta^1, ..., zeta^k) of increasing subsets
    with |zeta^1| + ... + |zeta^k| = k (empty components allowed)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > limit:
        raise SearchGuardError(f"partition_families limited to k <= {limit}")

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    cache = {j: partitions(j, k) for j in range(k + 1)}
    for sizes in compositions(k, k):
        for family in itertools.product(*(cache[j] for j in sizes)):
            yield family


def set_partitions(k):
    """Genuine set partitions of {1..k} as tuples of increasing blocks.

    These are the distinct nonempty products appearing in the worked
    rho_2 / rho_3 maxima; padded empty components contribute factors of 1
    and do not change the maximum.
    """
    def rec(items):
        if not items:
            yield []
            return
        first, rest = items[0], items[1:]
        for part in rec(rest):
            yield [[first]] + [list(b) for b in part]
            for i in range(len(part)):
                clone = [list(b) for b in part]
                clone[i] = [first] + clone[i]
                yield clone

    out = []
    for part in rec(list(range(1, k + 1))):
        out.append(tuple(tuple(sorted(b)) for b in part))
    return out


# ---------------------------------------------------------------------------
# difference operators (closed form)


def translate(f, w):
    """T_w f(x) = f(x + w), exact phase rotation of the mode amplitudes."""
    return as_mode_field(f).translated(w)


def difference(f, y, z):
    """Delta_{yz} f = (f(. + y) - f(. + z)) / 2, in closed form."""
    return as_mode_field(f).differenced(y, z)


def iterated_difference(f, T):
    """Delta_{T_k} f = Delta_{y_k z_k} ... Delta_{y_1 z_1} f (pair 1 first)."""
    T = _as_tuple(T)
    g = as_mode_field(f)
    for i in range(T.k):
        g = g.differenced(*T.pair(i))
    return g


class _SubsetNorms:
    """Memoized sup-norms of Delta_{zeta(T)} f over subsets zeta of {1..k}."""

    def __init__(self, f, T, sampler):
        self.f = as_mode_field(f)
        self.T = _as_tuple(T)
        self.sampler = sampler
        self._fields = {(): self.f}
        self._norms = {}

    def field(self, subset):
        subset = tuple(sorted(subset))
        if subset not in self._fields:
            head, last = subset[:-1], subset[-1]
            base = self.field(head)
            self._fields[subset] = base.differenced(*self.T.pair(last - 1))
        return self._fields[subset]

    def norm(self, subset):
        subset = tuple(sorted(subset))
        if subset not in self._norms:
            self._norms[subset] = self.field(subset).sup_norm(self.sampler)
        return self._norms[subset]


def g_k(f, T, sampler=None):
    """G_k(f, T_k): max over partitions of the product of block sup-norms."""
    T = _as_tuple(T)
    if T.k > MAX_COMBINATORIAL_K:
        raise SearchGuardError(f"g_k limited to k <= {MAX_COMBINATORIAL_K}")
    sampler = sampler or SupSampler()
    norms = _SubsetNorms(f, T, sampler)
    best = 0.0
    for part in set_partitions(T.k):
        prod = 1.0
        for block in part:
            prod *= norms.norm(block)
        best = max(best, prod)
    return best


def f_k(f, T, sampler=None):
    """The recursive majorant F_k(f, T_k):

    F_1 = ||Delta_{y_1 z_1} f||,
    F_j = ||Delta_{T_j} f|| + sum_{m<j} sum_{zeta in P_{m,j}}
          ||Delta_{zeta^c(T_j)} f|| F_m(zeta(T_j)).
    """
    T = _as_tuple(T)
    if T.k > MAX_COMBINATORIAL_K:
        raise SearchGuardError(f"f_k limited to k <= {MAX_COMBINATORIAL_K}")
    sampler = sampler or SupSampler()
    norms = _SubsetNorms(f, T, sampler)
    memo = {}

    def F(subset):
        subset = tuple(sorted(subset))
        if subset in memo:
            return memo[subset]
        j = len(subset)
        total = norms.norm(subset)
        for size in range(1, j):
            for zeta in itertools.combinations(subset, size):
                comp = tuple(i for i in subset if i not in zeta)
                total += norms.norm(comp) * F(zeta)
        memo[subset] = total
        return total

    return F(tuple(range(1, T.k + 1)))


# ---------------------------------------------------------------------------
# nested sup/inf searches


def _check_search(f, R, k, k_max=MAX_SEARCH_K):
    if R < 1:
        raise ValueError("R must be >= 1")
    if not 1 <= k <= k_max:
        raise SearchGuardError(f"nested searches limited to 1 <= k <= {k_max}")
    f = as_mode_field(f)
    f.winding.require_nonresonant()
    return f


class _NestedSearch:
    """sup_{y_1} inf_{z_1 in B_R} ... sup_{y_k} inf_{z_k in B_R} objective.

    y samples live on the torus lift (a lattice on T^m); z samples on a
    coarse lattice in B_R refined by golden section along each axis.  Each
    level scans its (y, z) lattice jointly as one flattened batch riding
    through the recursion, and the golden-section refinements run on
    vectorized per-row brackets, so the whole search is a short sequence
    of large array operations regardless of k.  Cost and memory scale like
    (n_y n_z)^k; the k guard exists for a reason.
    """

    def __init__(self, f, R, k, sampler):
        self.f = f
        self.R = float(R)
        self.k = int(k)
        self.sampler = sampler
        self.m = f.winding.m
        self.d = f.winding.d
        self.K = f.ks.shape[0]
        self.V = int(np.prod(f.value_shape, dtype=int)) if f.value_shape else 1
        self.y_betas = sampler.y_lattice(self.m)
        self.z_coarse = ball_lattice(self.d, self.R, sampler.z_res)
        self.step = self.R / sampler.z_res
        self._ph_y = np.exp(2j * np.pi * (f.ks @ self.y_betas.T))  # (K, Y)

    # state: dict subset -> amplitude tensor (K, B, V) over the fixed pairs;
    # row order after extending level `depth` is (b * Y + y) * nz + z.

    def _phase_z(self, zs):
        return np.exp(2j * np.pi * (self.f.ks @ self.f.winding.lift(zs).T))

    def _row_phases(self, zz, B):
        """Pair phases for per-row probes, row r = b*Y + y: (K, B*Y)."""
        return 0.5 * (np.tile(self._ph_y, (1, B)) - self._phase_z(zz))

    def _extend_lattice(self, state, depth, ph, B):
        """Every row gets every (y, z) pair: B -> B * Y * nz."""
        Y, nz = ph.shape[1], ph.shape[2]
        out = {}
        for subset, amps in state.items():
            out[subset] = np.repeat(amps, Y * nz, axis=1)
            out[subset + (depth,)] = (amps[:, :, None, None, :]
                                      * ph[:, None, :, :, None]).reshape(self.K, B * Y * nz, self.V)
        return out

    def _extend_rows(self, state, depth, ph, B):
        """Row r = b*Y + y gets its own z_r: B -> B * Y."""
        Y = self._ph_y.shape[1]
        out = {}
        for subset, amps in state.items():
            rep = np.repeat(amps, Y, axis=1)
            out[subset] = rep
            out[subset + (depth,)] = rep * ph[:, :, None]
        return out

    def _inner(self, state, B):
        """sup_y inf_z of the objective at the last level, batched: (B,)."""
        raise NotImplementedError

    def _level(self, state, depth, B):
        if depth == self.k - 1:
            return self._inner(state, B)

        def score_lattice(ph):
            nz = ph.shape[2]
            ext = self._extend_lattice(state, depth, ph, B)
            Y = ph.shape[1]
            return self._level(ext, depth + 1, B * Y * nz).reshape(B, Y, nz)

        def score_rows(zz):
            ph = self._row_phases(zz, B)
            ext = self._extend_rows(state, depth, ph, B)
            return self._level(ext, depth + 1, B * ph.shape[1])

        iters = min(self.sampler.gs_iters, 10)  # outer probes re-run the subtree
        return self._scan(state, B, score_lattice, score_rows, iters)

    def _scan(self, state, B, score_lattice, score_rows, gs_iters):
        """Joint (y, z) scan of one level: coarse lattice, per-row golden
        section along each axis, then inf over z and sup over y."""
        Y = self._ph_y.shape[1]
        ph = 0.5 * (self._ph_y[:, :, None] - self._phase_z(self.z_coarse)[:, None, :])
        vals = score_lattice(ph)  # (B, Y, nz)
        idx = np.argmin(vals, axis=2).reshape(-1)
        rows = np.arange(B * Y)
        best_v = vals.reshape(B * Y, -1)[rows, idx]
        best_z = self.z_coarse[idx].copy()  # (B*Y, d)
        for ax in range(self.d):
            def obj(coords):
                zz = best_z.copy()
                zz[:, ax] = coords
                return score_rows(zz)

            xb, fb = golden_section_min(obj, best_z[:, ax] - self.step,
                                        best_z[:, ax] + self.step, gs_iters)
            better = fb < best_v
            best_v = np.where(better, fb, best_v)
            best_z[better, ax] = xb[better]
        return best_v.reshape(B, Y).max(axis=1)

    def run(self):
        root = {(): self.f.amps.reshape(self.K, 1, self.V)}
        return float(self._level(root, 0, 1)[0])


def _chunked_abs_max(cos_t, sin_t, flat_r, flat_i, max_block=1 << 23):
    """max over lattice rows of |cos_t @ flat_r - sin_t @ flat_i|, by column
    blocks so the intermediate never exceeds ~max_block floats."""
    n_lat = cos_t.shape[0]
    ncols = flat_r.shape[1]
    chunk = max(1, max_block // max(n_lat, 1))
    out = np.empty(ncols)
    for lo in range(0, ncols, chunk):
        hi = min(ncols, lo + chunk)
        vals = np.abs(cos_t @ flat_r[:, lo:hi] - sin_t @ flat_i[:, lo:hi])
        out[lo:hi] = vals.max(axis=0)
    return out


class _RhoSearch(_NestedSearch):
    """Nested search with the G_k objective.

    All difference fields share the frequency set of f, so the torus-sup
    trig matrices depend only on the lattice resolution and are cached.
    """

    def __init__(self, f, R, k, sampler):
        super().__init__(f, R, k, sampler)
        self._trig = {}
        self._parts = set_partitions(k)

    def _trig_matrices(self, order):
        res = self.sampler.torus_res(self.m, order)
        if res not in self._trig:
            theta = 2.0 * np.pi * (torus_lattice(self.m, res) @ self.f.ks.T)
            self._trig[res] = (np.cos(theta), np.sin(theta))
        return self._trig[res]

    def _amps_sup(self, amps, order):
        """Torus sup-norms for an amplitude batch (K, B, V) -> (B,)."""
        cos_t, sin_t = self._trig_matrices(order)
        B = amps.shape[1]
        vals = _chunked_abs_max(cos_t, sin_t,
                                amps.real.reshape(self.K, -1),
                                amps.imag.reshape(self.K, -1))
        return vals.reshape(B, self.V).max(axis=1)

    def _combine(self, norms_fixed, norms_new, B, tail_shape):
        """Partition maximum from fixed-subset norms (B,) and new-subset
        norms (B, *tail_shape)."""
        depth = self.k - 1
        expand = (slice(None),) + (None,) * len(tail_shape)
        out = np.zeros((B,) + tail_shape)
        for part in self._parts:
            prod = np.ones((B,) + tail_shape)
            for block in part:
                zb = tuple(i - 1 for i in block)
                if depth in zb:
                    prod = prod * norms_new[zb]
                else:
                    prod = prod * norms_fixed[zb][expand]
            np.maximum(out, prod, out=out)
        return out

    def _inner(self, state, B):
        depth = self.k - 1
        Y = self.y_betas.shape[0]
        norms_fixed = {s: self._amps_sup(a, self.f.order + len(s))
                       for s, a in state.items() if s}

        def score_lattice(ph):
            nz = ph.shape[2]
            norms_new = {}
            for subset, amps in state.items():
                prod = (amps[:, :, None, None, :] * ph[:, None, :, :, None])
                flat = prod.reshape(self.K, B * Y * nz, self.V)
                norms_new[subset + (depth,)] = self._amps_sup(
                    flat, self.f.order + len(subset) + 1).reshape(B, Y, nz)
            return self._combine(norms_fixed, norms_new, B, (Y, nz))

        def score_rows(zz):
            # row r = b*Y + y, matching the lattice-scan ordering
            ph = 0.5 * (np.tile(self._ph_y, (1, B)) - self._phase_z(zz))
            norms_new = {}
            for subset, amps in state.items():
                rep = np.repeat(amps, Y, axis=1)  # (K, B*Y, V)
                norms_new[subset + (depth,)] = self._amps_sup(
                    rep * ph[:, :, None], self.f.order + len(subset) + 1).reshape(B, Y)
            fixed = {s: np.repeat(v, Y).reshape(B, Y) for s, v in norms_fixed.items()}
            out = np.zeros((B, Y))
            for part in self._parts:
                prod = np.ones((B, Y))
                for block in part:
                    zb = tuple(i - 1 for i in block)
                    prod = prod * (norms_new[zb] if depth in zb else fixed[zb])
                np.maximum(out, prod, out=out)
            return out.reshape(B * Y)

        return self._scan(state, B, score_lattice, score_rows, self.sampler.gs_iters)


def rho_k(f, R, k, sampler=None):
    """Sampled rho_k(f, R): nested alternating sup/inf of G_k (paper order,
    y_1 outermost).  Returns a RhoEstimate tagged two-sided-unresolved."""
    sampler = sampler or SupSampler()
    f = _check_search(f, R, k)
    value = _RhoSearch(f, R, k, sampler).run()
    return RhoEstimate(kind="rho_k", k=int(k), R=float(R), value=float(value),
                       res_y=sampler.y_res, res_z=sampler.z_res)


def rho_star(f, R, C=2.0, k_max=MAX_SEARCH_K, sampler=None):
    """rho_*(f, R) = min over k in {1..min(k_max, floor(R))} of C^k k! rho_k(f, R/k)."""
    if C < 1:
        raise ValueError("C must be >= 1")
    if R < 1:
        raise ValueError("R must be >= 1")
    if k_max > MAX_SEARCH_K:
        raise SearchGuardError(f"rho_star limited to k_max <= {MAX_SEARCH_K}")
    sampler = sampler or SupSampler()
    best = None
    best_k = None
    values = {}
    for k in range(1, min(k_max, int(math.floor(R))) + 1):
        est = rho_k(f, R / k, k, sampler)
        val = (C ** k) * math.factorial(k) * est.value
        values[k] = val
        if best is None or val < best:
            best, best_k = val, k
    return RhoEstimate(kind="rho_star", k=int(best_k), R=float(R), value=float(best),
                       res_y=sampler.y_res, res_z=sampler.z_res,
                       extra={"C": C, "per_k": values})


# ---------------------------------------------------------------------------
# the L^1-over-unit-balls modulus omega_k


def _unit_ball_quadrature(d, res=32):
    """Indicator-weighted tensor midpoint rule on the bounding box of B_1."""
    axis = -1.0 + (np.arange(res) + 0.5) * (2.0 / res)
    if d == 1:
        pts = axis[:, None]
    else:
        grid = np.meshgrid(*([axis] * d), indexing="ij")
        pts = np.stack([g.ravel() for g in grid], axis=-1)
    inside = np.linalg.norm(pts, axis=1) <= 1.0
    pts = pts[inside]
    w = (2.0 / res) ** d
    return pts, np.full(len(pts), w)


class _UnitBallIntegrator:
    """sup_{z'} int_{B_1(z')} |g| for mode fields with a fixed frequency set.

    The z' sup runs over a torus lattice; the trig matrices over the
    combined (lattice + quadrature-shift) points are built once.
    """

    def __init__(self, ks, winding, sampler):
        self.ks = ks
        pts, w = _unit_ball_quadrature(winding.d, sampler.omega_quad_res)
        res = max(2, min(sampler.omega_res, int(sampler.max_points ** (1.0 / winding.m))))
        alphas = torus_lattice(winding.m, res)
        shifts = winding.lift(pts)
        eval_pts = (alphas[:, None, :] + shifts[None, :, :]).reshape(-1, winding.m)
        theta = 2.0 * np.pi * (eval_pts @ ks.T)
        self._cos = np.cos(theta)
        self._sin = np.sin(theta)
        self._shape = (len(alphas), len(pts))
        self._w = w

    def __call__(self, amps_batch):
        """amps_batch shape (K, B, V) -> (B,)."""
        K, B = amps_batch.shape[0], amps_batch.shape[1]
        V = int(np.prod(amps_batch.shape[2:], dtype=int)) if amps_batch.ndim > 2 else 1
        rows = self._cos.shape[0]
        block = max(1, (1 << 23) // max(rows * V, 1))
        out = np.empty(B)
        for lo in range(0, B, block):
            hi = min(B, lo + block)
            seg = amps_batch[:, lo:hi].reshape(K, -1)
            vals = np.abs(self._cos @ seg.real - self._sin @ seg.imag)
            vals = vals.reshape(self._shape[0], self._shape[1], hi - lo, V).max(axis=3)
            integrals = np.tensordot(vals, self._w, axes=([1], [0]))
            out[lo:hi] = integrals.max(axis=0)
        return out


def omega(f, T, sampler=None):
    """omega(f, T_k) = sup_{z'} int_{B_1(z')} |Delta_{T_k} f|, by fixed
    midpoint quadrature and a torus-lattice sup over z'."""
    sampler = sampler or SupSampler()
    g = iterated_difference(f, T)
    integ = _UnitBallIntegrator(g.ks, g.winding, sampler)
    return float(integ(g.amps.reshape(g.amps.shape[0], 1, -1))[0])


def l1_unit_ball_sup(f, sampler=None):
    """sup_{z'} ||f||_{L^1(B_1(z'))} (the k=0 case of omega)."""
    sampler = sampler or SupSampler()
    g = as_mode_field(f)
    integ = _UnitBallIntegrator(g.ks, g.winding, sampler)
    return float(integ(g.amps.reshape(g.amps.shape[0], 1, -1))[0])


class _OmegaSearch(_NestedSearch):
    """Nested search with the omega objective (only the full difference
    Delta_{T_k} f is integrated, so only the full-subset amplitudes matter)."""

    def __init__(self, f, R, k, sampler):
        super().__init__(f, R, k, sampler)
        self._integ = _UnitBallIntegrator(f.ks, f.winding, sampler)

    def _extend_lattice(self, state, depth, ph, B):
        Y, nz = ph.shape[1], ph.shape[2]
        full = tuple(range(depth))
        amps = state[full]
        new = (amps[:, :, None, None, :]
               * ph[:, None, :, :, None]).reshape(self.K, B * Y * nz, self.V)
        return {full + (depth,): new}

    def _extend_rows(self, state, depth, ph, B):
        full = tuple(range(depth))
        rep = np.repeat(state[full], self._ph_y.shape[1], axis=1)
        return {full + (depth,): rep * ph[:, :, None]}

    def _inner(self, state, B):
        depth = self.k - 1
        Y = self._ph_y.shape[1]
        amps = state[tuple(range(depth))]  # (K, B, V)

        def score_lattice(ph):
            nz = ph.shape[2]
            prod = (amps[:, :, None, None, :]
                    * ph[:, None, :, :, None]).reshape(self.K, B * Y * nz, self.V)
            return self._integ(prod).reshape(B, Y, nz)

        def score_rows(zz):
            ph = self._row_phases(zz, B)
            rep = np.repeat(amps, Y, axis=1)
            return self._integ(rep * ph[:, :, None])

        return self._scan(state, B, score_lattice, score_rows, self.sampler.gs_iters)


def omega_k(f, R, k, sampler=None):
    """Sampled omega_k(f, R): nested sup/inf of omega over translation pairs."""
    sampler = sampler or SupSampler()
    f = _check_search(f, R, k)
    value = _OmegaSearch(f, R, k, sampler).run()
    return RhoEstimate(kind="omega_k", k=int(k), R=float(R), value=float(value),
                       res_y=sampler.y_res, res_z=sampler.z_res)
