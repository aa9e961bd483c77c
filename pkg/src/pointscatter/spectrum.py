"""Quantisation condition of the point scatterer and its eigenvalues.

The new eigenvalues solve

    F(lam) = sum_j r(n_j) * (1/(n_j - lam) - n_j/(n_j^2 + 1)) = target

with target c0*tan(phi/2) for a fixed extension parameter (weak coupling), or
with the sum restricted to an energy window |n_j - lam| < lam^delta and target
1/alpha (strong coupling).  Sums run over the norm table up to its cutoff X; the
rest is replaced by the integral of the Weyl density (pi in 2D, 2*pi*sqrt(t) in
3D) over (X, inf).
"""
from __future__ import annotations

import math
import weakref
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from . import _kernels
from .errors import BracketError, CoverageError, PoleError, UsageError
from .lattice import HUXLEY_EXPONENT, NormTable, counting, weyl_count

THETA = float(HUXLEY_EXPONENT)
MIN_CUTOFF = 1e3
DEFAULT_DELTA = 0.5
ROOT_REL_WIDTH = 1e-10
GROUND_LIMIT = -1e12

# Exponent of the lattice-count remainder used in tail error bounds.
REMAINDER_EXPONENT = {2: THETA, 3: 0.75}


@dataclass(frozen=True)
class Weak:
    """Fixed self-adjoint extension parameter phi in (-pi, pi)."""

    phi: float

    def __post_init__(self):
        if not -math.pi < self.phi < math.pi:
            raise UsageError(
                f"phi must lie strictly inside (-pi, pi); phi=pi is the unperturbed Laplacian, got {self.phi}")


@dataclass(frozen=True)
class Strong:
    """Fixed physical coupling alpha with energy window exponent delta."""

    alpha: float
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.alpha == 0 or not math.isfinite(self.alpha):
            raise UsageError(f"alpha must be finite and nonzero, got {self.alpha}")
        if not THETA < self.delta < 1:
            raise UsageError(f"delta must lie in (131/416, 1), got {self.delta}")


CouplingSpec = Weak | Strong


@dataclass(frozen=True)
class SecularValue:
    lam: float
    value: float
    tail_error_bound: float


@dataclass(frozen=True)
class EigenvalueRecord:
    j: int
    lam: float
    left_norm: float | None
    right_norm: float
    residual: float

    @property
    def d(self) -> float:
        return self.right_norm - self.lam


class Spectrum(Sequence):
    """Solved new eigenvalues, one per interlacing interval, in index order.

    Stored column-wise; indexing yields :class:`EigenvalueRecord` objects.
    """

    def __init__(self, j, lam, left, right, residual, coupling=None, torus=None):
        self.j = np.asarray(j, dtype=np.int64)
        self.lam = np.asarray(lam, dtype=float)
        self.left = np.asarray(left, dtype=float)
        self.right = np.asarray(right, dtype=float)
        self.residual = np.asarray(residual, dtype=float)
        self.coupling = coupling
        self.torus = torus

    @property
    def d(self) -> np.ndarray:
        return self.right - self.lam

    def __len__(self):
        return self.j.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = np.arange(len(self))[i]
            return Spectrum(self.j[idx], self.lam[idx], self.left[idx], self.right[idx],
                            self.residual[idx], self.coupling, self.torus)
        left = None if self.j[i] == 0 else float(self.left[i])
        return EigenvalueRecord(int(self.j[i]), float(self.lam[i]), left,
                                float(self.right[i]), float(self.residual[i]))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write("j,lambda,left_norm,right_norm,d_j,residual\n")
            for j, lam, left, right, res in zip(self.j.tolist(), self.lam.tolist(),
                                                self.left.tolist(), self.right.tolist(),
                                                self.residual.tolist()):
                left_s = "" if j == 0 else format(left, ".17g")
                fh.write(f"{j},{lam:.17g},{left_s},{right:.17g},{right - lam:.17g},{res:.17g}\n")
        return path


def as_columns(eigenvalues) -> tuple[np.ndarray, np.ndarray]:
    """Index and eigenvalue arrays from a :class:`Spectrum` or an iterable of records."""
    if isinstance(eigenvalues, Spectrum):
        return eigenvalues.j, eigenvalues.lam
    recs = list(eigenvalues)
    return (np.array([r.j for r in recs], dtype=np.int64),
            np.array([r.lam for r in recs], dtype=float))


# -- tree evaluator cache --------------------------------------------------

class _Tree:
    """Precomputed treecode data for one norm table."""

    def __init__(self, table: NormTable):
        norms = np.ascontiguousarray(table.norms, dtype=float)
        weights = table.mult.astype(float)
        cutoff = float(table.cutoff)
        self.norms, self.weights = norms, weights
        self.dim = table.torus.dimension
        self.cutoff = cutoff
        spacing = cutoff / max(len(norms), 1)
        self.h0 = max(16.0 * spacing, 1e-3) if cutoff > 0 else 1.0
        self.nbins0 = int(math.floor(cutoff / self.h0)) + 1
        nlevels, nb = 1, self.nbins0
        while nb > 8:
            nb = ((nb - 1) >> 1) + 1
            nlevels += 1
        self.nlevels = nlevels
        bins = np.minimum(np.floor(norms / self.h0), self.nbins0 - 1).astype(np.int64)
        self.starts = np.searchsorted(bins, np.arange(self.nbins0 + 1), side="left").astype(np.int64)
        self.moments, self.offsets = _kernels.build_moments(
            norms, weights, self.h0, self.nbins0, self.nlevels, _kernels.ORDER)
        self.const = float(np.sum(weights * norms / (norms * norms + 1.0)))
        self.quartic_tail = _quartic_tail(cutoff) if self.dim == 3 else 0.0

    def args(self):
        return (self.norms, self.weights, self.starts, self.h0, self.nbins0, self.nlevels,
                self.moments, self.offsets, self.const, self.cutoff, self.dim, self.quartic_tail)

    def __call__(self, lam: float) -> tuple[float, float]:
        return _kernels.secular(float(lam), *self.args())


_TREES: dict[int, _Tree] = {}


def _tree(table: NormTable) -> _Tree:
    key = id(table)
    tree = _TREES.get(key)
    if tree is None:
        tree = _TREES[key] = _Tree(table)
        weakref.finalize(table, _TREES.pop, key, None)
    return tree


def _quartic_tail(cutoff: float) -> float:
    if cutoff <= 0:
        return math.pi / math.sqrt(2.0)
    val, _ = integrate.quad(lambda u: 2.0 / (1.0 + u**4), math.sqrt(cutoff), np.inf,
                            epsabs=1e-15, epsrel=1e-13)
    return val


# -- tail error bounds -------------------------------------------------------

def _remainder_constant(table: NormTable) -> float:
    """Empirical sup of |R(t)| / t^exponent over the upper part of the table."""
    x = table.cutoff
    exponent = REMAINDER_EXPONENT[table.torus.dimension]
    samples = np.linspace(0.25 * x, x, 33)
    ratios = [abs(counting(table, t) - weyl_count(table.torus.dimension, t)) / t**exponent
              for t in samples if t >= 1]
    return max(ratios, default=1.0) or 1.0


def _summation_by_parts_bound(table: NormTable, f, fprime) -> float:
    x = table.cutoff
    dim = table.torus.dimension
    exponent = REMAINDER_EXPONENT[dim]
    remainder = abs(counting(table, x) - weyl_count(dim, x))
    # on a log scale the integrand decays exponentially, which quad handles cleanly
    integral, _ = integrate.quad(lambda s: math.exp((exponent + 1) * s) * abs(fprime(math.exp(s))),
                                 math.log(x), math.log(x) + 60, limit=200)
    return remainder * abs(f(x)) + _remainder_constant(table) * integral


def _density_integral(dim: int, f, x: float) -> float:
    if dim == 2:
        val, _ = integrate.quad(lambda t: math.pi * f(t), x, np.inf, limit=200)
    else:
        val, _ = integrate.quad(lambda t: 2 * math.pi * math.sqrt(t) * f(t), x, np.inf, limit=200)
    return val


# -- public operations ------------------------------------------------------

def compute_c0(table: NormTable, *, tail: bool = True, tol: float | None = None) -> float:
    """c0 = sum_j r(n_j) / (n_j^2 + 1), with the Weyl-density tail beyond the cutoff.

    Raises
    ------
    CoverageError
        ``tail`` requested with a cutoff below 1e3, or the summation-by-parts
        bound on the tail exceeds ``tol``.
    """
    norms, weights = table.norms, table.mult.astype(float)
    value = float(np.sum(weights / (norms * norms + 1.0)))
    if not tail:
        return value
    x = table.cutoff
    if x < MIN_CUTOFF:
        raise CoverageError(f"cutoff {x} below {MIN_CUTOFF:g}; cannot attach the analytic tail")
    if table.torus.dimension == 2:
        value += math.pi * (0.5 * math.pi - math.atan(x))
    else:
        value += _density_integral(3, lambda t: 1.0 / (t * t + 1.0), x)
    if tol is not None:
        bound = _summation_by_parts_bound(
            table, lambda t: 1.0 / (t * t + 1.0), lambda t: -2.0 * t / (t * t + 1.0) ** 2)
        if bound > tol:
            raise CoverageError(f"c0 tail bound {bound:.3g} exceeds tolerance {tol:g}")
    return value


def _check_pole(table: NormTable, lam: float):
    k = int(np.searchsorted(table.norms, lam))
    for i in (k - 1, k):
        if 0 <= i < len(table) and abs(table.norms[i] - lam) <= 4e-16 * max(1.0, abs(lam)):
            raise PoleError(f"lambda={lam!r} coincides with the norm n_{i}={table.norms[i]!r}")


def _check_cutoff(table: NormTable, lam: float):
    need = max(2.0 * lam, MIN_CUTOFF)
    if table.cutoff < need:
        raise CoverageError(f"table cutoff {table.cutoff:g} below required {need:g} for lambda={lam:g}")


def direct_sum(table: NormTable, lams, *, chunk: int = 2**22) -> np.ndarray:
    """Partial secular sum over the whole table by direct summation (vectorized in lambda)."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    norms = table.norms
    weights = table.mult.astype(float)
    const = float(np.sum(weights * norms / (norms * norms + 1.0)))
    out = np.empty(lams.size)
    step = max(1, chunk // max(1, norms.size))
    for s in range(0, lams.size, step):
        block = lams[s:s + step]
        out[s:s + step] = (weights / (norms[None, :] - block[:, None])).sum(axis=1)
    return out - const


def _tail(table: NormTable, lam):
    tree_tail = _quartic_tail(table.cutoff) if table.torus.dimension == 3 else 0.0
    return np.array([_kernels.tail(float(v), float(table.cutoff), table.torus.dimension, tree_tail)[0]
                     for v in np.atleast_1d(lam)])


def eval_secular(table: NormTable, lam: float) -> SecularValue:
    """Evaluate the full quantisation sum at lam (direct summation plus integral tail).

    Raises
    ------
    PoleError
        lam equals a norm.
    CoverageError
        cutoff below max(2*lam, 1e3).
    """
    lam = float(lam)
    _check_pole(table, lam)
    _check_cutoff(table, lam)
    value = float(direct_sum(table, lam)[0] + _tail(table, lam)[0])
    bound = _summation_by_parts_bound(
        table,
        lambda t: 1.0 / (t - lam) - t / (t * t + 1.0),
        lambda t: -1.0 / (t - lam) ** 2 - (1.0 - t * t) / (t * t + 1.0) ** 2,
    )
    return SecularValue(lam, value, bound)


def secular_derivative(table: NormTable, lam: float) -> float:
    """d/dlam of the partial sum over the table (excluding the tiny tail term)."""
    return float(np.sum(table.mult / (table.norms - lam) ** 2))


def weak_target(table: NormTable, coupling: Weak) -> float:
    return compute_c0(table) * math.tan(coupling.phi / 2.0)


def intervals_up_to(table: NormTable, x: float) -> range:
    """Interval indices j = 0..J with n_J <= x (j = 0 is the ground state)."""
    return range(0, table.count_le(x))


def _resolve_range(table: NormTable, j_range) -> np.ndarray:
    js = np.asarray(list(j_range), dtype=np.int64)
    if js.size and (js.min() < 0 or js.max() >= len(table)):
        raise CoverageError(f"interval indices must lie in [0, {len(table) - 1}]")
    return js


def _parallel(fn, js: np.ndarray, threads: int):
    """Run ``fn`` on contiguous chunks of ``js`` and concatenate in index order."""
    if threads <= 1 or js.size < 2:
        return fn(js)
    chunks = np.array_split(js, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(fn, chunks))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))


def _ground_bracket(fn, target: float) -> float | None:
    """Left end of a bracket (lo, 0) for the ground state, or None if none above GROUND_LIMIT."""
    lo = -1.0
    while lo >= GROUND_LIMIT:
        if fn(lo) - target < 0:
            return lo
        lo *= 2.0
    return None


def solve_weak(table: NormTable, coupling: Weak, j_range=None, *, xmax: float | None = None,
               threads: int = 1) -> Spectrum:
    """New eigenvalues for fixed phi: roots of F(lam) = c0*tan(phi/2).

    Parameters
    ----------
    j_range : iterable of int, optional
        Interval indices; j >= 1 is the interval (n_{j-1}, n_j), j = 0 the
        ground state below n_0 = 0.  Defaults to all intervals with n_j <= xmax.
    threads : int
        Intervals are solved in contiguous chunks on this many threads; the
        result does not depend on it.
    """
    if j_range is None:
        j_range = intervals_up_to(table, table.cutoff / 2 if xmax is None else xmax)
    js = _resolve_range(table, j_range)
    if js.size == 0:
        return Spectrum([], [], [], [], [], coupling, table.torus)
    if table.cutoff < max(MIN_CUTOFF, 2.0 * table.norms[js.max()]):
        raise CoverageError(
            f"table cutoff {table.cutoff:g} must be >= max(1e3, 2*n_j) = "
            f"{max(MIN_CUTOFF, 2.0 * table.norms[js.max()]):g}")
    target = weak_target(table, coupling)
    tree = _tree(table)
    norms = table.norms

    def run(chunk):
        lo = np.empty(chunk.size)
        hi = np.empty(chunk.size)
        keep = np.ones(chunk.size, dtype=bool)
        for i, j in enumerate(chunk.tolist()):
            if j == 0:
                left = _ground_bracket(lambda v: tree(v)[0], target)
                if left is None:
                    keep[i] = False
                    left = -1.0
                lo[i], hi[i] = left, 0.0
            else:
                lo[i], hi[i] = norms[j - 1], norms[j]
        roots, resid = _kernels.bisect_full(lo[keep], hi[keep], np.full(keep.sum(), target),
                                            ROOT_REL_WIDTH, *tree.args())
        return chunk[keep], roots, resid

    jj, roots, resid = _parallel(run, js, threads)
    return _assemble(table, jj, roots, resid, coupling)


def _assemble(table, jj, roots, resid, coupling):
    norms = table.norms
    left = np.where(jj > 0, norms[np.maximum(jj - 1, 0)], -np.inf)
    right = norms[jj]
    if np.any(roots >= right) or np.any(roots <= left):
        bad = int(jj[np.nonzero((roots >= right) | (roots <= left))[0][0]])
        raise BracketError(f"root for interval {bad} escaped its bracket")
    return Spectrum(jj, roots, left, right, resid, coupling, table.torus)


def strong_windows(table: NormTable, js: np.ndarray, delta: float, window: str = "anchored"):
    """Norm index ranges [k0, k1] of the summation window for each interval.

    The window |n_k - n_j| < n_j^delta is anchored at the right endpoint n_j of
    the interval and always extended to contain n_{j-1}, so that the windowed
    sum runs from -inf to +inf across the interval.
    """
    norms = table.norms
    if window == "full":
        return np.zeros(js.size, dtype=np.int64), np.full(js.size, len(table) - 1, dtype=np.int64)
    if window != "anchored":
        raise UsageError(f"unknown window mode {window!r}")
    anchor = norms[js]
    radius = np.where(anchor > 0, np.abs(anchor) ** delta, 0.0)
    if np.any(anchor + radius > table.cutoff):
        raise CoverageError("strong-coupling window extends beyond the table cutoff")
    k0 = np.searchsorted(norms, anchor - radius, side="right")
    k1 = np.searchsorted(norms, anchor + radius, side="left") - 1
    k0 = np.minimum(k0, np.maximum(js - 1, 0))
    k1 = np.maximum(k1, js)
    return k0.astype(np.int64), k1.astype(np.int64)


def solve_strong(table: NormTable, coupling: Strong, j_range=None, *, xmax: float | None = None,
                 threads: int = 1, window: str = "anchored", target: float | None = None) -> Spectrum:
    """New eigenvalues for fixed alpha: roots of the windowed sum = 1/alpha.

    ``window="full"`` sums over the whole table instead (no tail), which is
    used to cross-check against :func:`solve_weak`.  ``target`` overrides
    1/alpha for such checks.
    """
    if j_range is None:
        if xmax is None:
            xmax = table.cutoff / 2
        j_range = intervals_up_to(table, xmax)
    js = _resolve_range(table, j_range)
    if js.size == 0:
        return Spectrum([], [], [], [], [], coupling, table.torus)
    goal = 1.0 / coupling.alpha if target is None else float(target)
    k0, k1 = strong_windows(table, js, coupling.delta, window)
    norms = table.norms
    weights = table.mult.astype(float)
    pos = {j: i for i, j in enumerate(js.tolist())}

    def run(chunk):
        idx = np.array([pos[j] for j in chunk.tolist()], dtype=np.int64)
        lo = np.empty(chunk.size)
        hi = np.empty(chunk.size)
        keep = np.ones(chunk.size, dtype=bool)
        for i, j in enumerate(chunk.tolist()):
            if j == 0:
                a, b = int(k0[idx[i]]), int(k1[idx[i]])
                left = _ground_bracket(lambda v: _kernels.windowed(v, norms, weights, a, b)[0], goal)
                if left is None:
                    keep[i] = False
                    left = -1.0
                lo[i], hi[i] = left, 0.0
            else:
                lo[i], hi[i] = norms[j - 1], norms[j]
        roots, resid = _kernels.bisect_window(lo[keep], hi[keep], np.full(keep.sum(), goal),
                                              ROOT_REL_WIDTH, norms, weights,
                                              k0[idx][keep], k1[idx][keep])
        return chunk[keep], roots, resid

    jj, roots, resid = _parallel(run, js, threads)
    return _assemble(table, jj, roots, resid, coupling)


def verify_truncation(table: NormTable, lam: float, delta: float = DEFAULT_DELTA) -> float:
    """Sum over norms outside the window |n - lam| < lam^delta, plus pi*log(lam).

    Bounded in lam for a 2D torus; the tail beyond the cutoff is the same
    integral used by :func:`eval_secular`.
    """
    if table.torus.dimension != 2:
        raise UsageError("the truncation asymptotic is stated for 2D tori")
    lam = float(lam)
    if lam < 10:
        raise UsageError("lambda must be at least 10")
    if not THETA < delta < 1:
        raise UsageError(f"delta must lie in (131/416, 1), got {delta}")
    radius = lam**delta
    need = max(2 * lam, lam + 10 * radius)
    if table.cutoff < need:
        raise CoverageError(f"table cutoff {table.cutoff:g} below required {need:g}")
    norms = table.norms
    outside = np.abs(norms - lam) >= radius
    n, r = norms[outside], table.mult[outside].astype(float)
    value = float(np.sum(r * (1.0 / (n - lam) - n / (n * n + 1.0))))
    return value + float(_tail(table, lam)[0]) + math.pi * math.log(lam)


def brute_force_roots(table: NormTable, target: float, interval, grid_step: float = 1e-4,
                      *, tol: float = 1e-10) -> list[float]:
    """Roots of F(lam) - target in ``interval`` by grid scan and bisection.

    Sign changes across a pole are not roots.  Next to a pole the function
    tends to +inf from the left and -inf from the right, so a pole adjacent to
    a grid point of the right sign also brackets a root.  Refinement is plain
    bisection on directly summed values to an absolute width ``tol``.
    """
    a, b = map(float, interval)
    norms = table.norms
    poles = norms[(norms >= a) & (norms <= b)]
    grid = np.append(np.arange(a, b, grid_step), b)
    grid = grid[~np.isin(grid, poles)]
    if grid.size and grid.max() > 0:
        _check_cutoff(table, float(grid.max()))
    fvals = direct_sum(table, grid) + _tail(table, grid) - target if grid.size else np.empty(0)

    points = np.concatenate([grid, poles])
    is_pole = np.concatenate([np.zeros(grid.size, bool), np.ones(poles.size, bool)])
    values = np.concatenate([fvals, np.zeros(poles.size)])
    order = np.argsort(points, kind="stable")
    points, is_pole, values = points[order], is_pole[order], values[order]

    def g(v):
        return float(direct_sum(table, v)[0] + _tail(table, v)[0] - target)

    roots = []
    for i in range(points.size - 1):
        p, q = points[i], points[i + 1]
        if is_pole[i] and is_pole[i + 1]:
            bracket = True
        elif is_pole[i]:
            bracket = values[i + 1] > 0
        elif is_pole[i + 1]:
            bracket = values[i] < 0
        else:
            bracket = values[i] <= 0 < values[i + 1]
        if not bracket:
            continue
        lo, hi = p, q
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if g(mid) > 0:
                hi = mid
            else:
                lo = mid
        roots.append(0.5 * (lo + hi))
    return roots
