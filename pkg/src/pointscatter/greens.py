"""Green's-function eigenstates and their matrix elements.

The eigenfunction attached to a new eigenvalue lam is (a multiple of)

    G(x) = sum_xi c_xi exp(i <xi, x>),   c_xi = exp(-i <xi, x0>) / (|xi|^2 - lam),

so that ||G||^2 = area * sum_j r(n_j) / (n_j - lam)^2.  Coefficients are kept on
a dense box of lattice indices (zero outside |xi|^2 <= cutoff), which turns the
shift xi -> xi - zeta of a position observable into an array slice.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .errors import CoverageError, PoleError, UsageError
from .lattice import NormTable, _key_norms
from .spectrum import as_columns

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GreensState:
    """Plane-wave coefficients of G_lam truncated at ``coefficient_cutoff``.

    ``l2_norm_sq`` is the full squared norm including the integral tail;
    ``tail_mass`` is the part of it carried by |xi|^2 > coefficient_cutoff.
    """

    lam: float
    x0: tuple[float, ...]
    coefficients: np.ndarray
    index_radius: tuple[int, ...]
    lattice_scale: tuple[float, ...]
    norm_grid: np.ndarray
    l2_norm_sq: float
    tail_mass: float
    coefficient_cutoff: float
    area: float = field(default=4 * math.pi**2)

    @property
    def dimension(self) -> int:
        return self.coefficients.ndim

    @property
    def retained_sq(self) -> float:
        return self.area * float(np.sum(np.abs(self.coefficients) ** 2))

    @property
    def tail_fraction(self) -> float:
        return self.tail_mass / self.l2_norm_sq

    def coefficient(self, index) -> complex:
        pos = tuple(i + r for i, r in zip(index, self.index_radius))
        if any(p < 0 or p >= s for p, s in zip(pos, self.coefficients.shape)):
            return 0j
        return complex(self.coefficients[pos])

    def mass_fraction(self, norm: float) -> float:
        """Share of the retained coefficient mass on the circle |xi|^2 = norm."""
        weights = np.abs(self.coefficients) ** 2
        return float(weights[self.norm_grid == norm].sum() / weights.sum())

    def lattice_vectors(self) -> list[np.ndarray]:
        """Cartesian components of xi on the coefficient box (one array per axis)."""
        axes = [np.arange(-r, r + 1) * s for r, s in zip(self.index_radius, self.lattice_scale)]
        return np.meshgrid(*axes, indexing="ij")


def default_cutoff(lam: float, dimension: int = 2) -> float:
    if dimension == 3:
        return max(4 * abs(lam), abs(lam) + 1e3)
    return max(4 * abs(lam), abs(lam) + 1e4)


def _index_box(table: NormTable, cutoff: float):
    """Index radii, per-axis scales and |xi|^2 on the box, computed as the table does."""
    torus = table.torus
    if table.exact:
        coeffs, denom, is_sqrt = torus._exact_form()
        scale = math.sqrt(denom) if is_sqrt else denom
        radii = tuple(math.isqrt(int(cutoff * scale) // c) + 1 for c in coeffs)
        grids = np.meshgrid(*[np.arange(-r, r + 1, dtype=np.int64) for r in radii], indexing="ij")
        keys = sum(c * g * g for c, g in zip(coeffs, grids))
        norms = _key_norms(keys, denom, is_sqrt)
        lattice_scale = tuple(math.sqrt(c / scale) for c in coeffs)
    else:
        coeffs = torus._float_coefficients()
        radii = tuple(int(math.sqrt(cutoff / float(c))) + 1 for c in coeffs)
        grids = np.meshgrid(*[np.arange(-r, r + 1, dtype=np.int64) for r in radii], indexing="ij")
        vals = coeffs[0] * grids[0].astype(np.longdouble) ** 2
        for c, g in zip(coeffs[1:], grids[1:]):
            vals = vals + c * g.astype(np.longdouble) ** 2
        norms = vals.astype(np.float64)
        lattice_scale = tuple(math.sqrt(float(c)) for c in coeffs)
    return radii, lattice_scale, norms


def _tail_mass(dim: int, cutoff: float, lam: float) -> float:
    """Weyl-density integral of 1/(t - lam)^2 over (cutoff, inf)."""
    if dim == 2:
        return math.pi / (cutoff - lam)
    val, _ = integrate.quad(lambda t: 2 * math.pi * math.sqrt(t) / (t - lam) ** 2, cutoff, np.inf)
    return val


def build_greens_state(table: NormTable, lam: float, x0=None, cutoff: float | None = None,
                       *, max_tail_fraction: float | None = None) -> GreensState:
    """Coefficients of G_lam(x, x0) for all dual vectors with |xi|^2 <= cutoff.

    Raises
    ------
    PoleError
        lam is a norm.
    CoverageError
        cutoff below max(2|lam|, 1e3), beyond the table, or leaving a tail
        fraction above ``max_tail_fraction``.
    """
    lam = float(lam)
    dim = table.torus.dimension
    x0 = tuple(float(v) for v in (x0 if x0 is not None else (0.0,) * dim))
    if len(x0) != dim:
        raise UsageError(f"x0 must have {dim} components")
    if cutoff is None:
        cutoff = default_cutoff(lam, dim)
    if cutoff < max(2 * abs(lam), 1e3):
        raise CoverageError(f"coefficient cutoff {cutoff:g} below max(2|lambda|, 1e3)")
    if cutoff > table.cutoff:
        raise CoverageError(f"coefficient cutoff {cutoff:g} beyond the table cutoff {table.cutoff:g}")
    k = int(np.searchsorted(table.norms, lam))
    for i in (k - 1, k):
        if 0 <= i < len(table) and table.norms[i] == lam:
            raise PoleError(f"lambda={lam!r} is the norm n_{i}")

    radii, scale, norms = _index_box(table, cutoff)
    inside = norms <= cutoff
    phase = sum(
        (np.arange(-r, r + 1) * s * x).reshape([-1 if a == ax else 1 for a in range(dim)])
        for ax, (r, s, x) in enumerate(zip(radii, scale, x0)))
    with np.errstate(divide="ignore"):
        coeffs = np.where(inside, np.exp(-1j * phase) / (norms - lam), 0)

    kept = table.norms <= cutoff
    area = table.torus.area_or_volume
    series = float(np.sum(table.mult[kept] / (table.norms[kept] - lam) ** 2))
    tail = _tail_mass(dim, cutoff, lam)
    state = GreensState(
        lam=lam, x0=x0, coefficients=coeffs, index_radius=radii, lattice_scale=scale,
        norm_grid=np.where(inside, norms, np.inf), l2_norm_sq=area * (series + tail),
        tail_mass=area * tail, coefficient_cutoff=cutoff, area=area)
    if max_tail_fraction is not None and state.tail_fraction > max_tail_fraction:
        raise CoverageError(
            f"tail fraction {state.tail_fraction:.3g} exceeds {max_tail_fraction:g}; raise the cutoff")
    return state


@dataclass(frozen=True)
class Observable:
    """Finitely supported symbol: {(zeta, k): a_hat(zeta, k)}.

    zeta is a dual-lattice vector in integer index coordinates, k the angular
    frequency in the momentum direction.
    """

    terms: Mapping

    def __post_init__(self):
        terms = {(tuple(int(v) for v in z), int(k)): complex(a) for (z, k), a in dict(self.terms).items()}
        object.__setattr__(self, "terms", terms)

    @classmethod
    def constant(cls, dim: int = 2) -> "Observable":
        return cls({((0,) * dim, 0): 1.0})

    @classmethod
    def position(cls, zeta) -> "Observable":
        """The multiplication operator by exp(i <zeta, x>)."""
        return cls({(tuple(zeta), 0): 1.0})

    @classmethod
    def momentum(cls, k: int, dim: int = 2) -> "Observable":
        """exp(i k phi), phi the direction of momentum."""
        return cls({((0,) * dim, k): 1.0})

    def is_real(self, tol: float = 1e-14) -> bool:
        for (z, k), a in self.terms.items():
            partner = self.terms.get((tuple(-v for v in z), -k), 0)
            if abs(partner - a.conjugate()) > tol:
                return False
        return True


def _shift(arr: np.ndarray, zeta) -> np.ndarray:
    """B[xi] = arr[xi - zeta] on the same index box (zero where undefined)."""
    out = np.zeros_like(arr)
    dst, src = [], []
    for z, size in zip(zeta, arr.shape):
        if z >= 0:
            dst.append(slice(z, size))
            src.append(slice(0, size - z))
        else:
            dst.append(slice(0, size + z))
            src.append(slice(-z, size))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _angular_weight(state: GreensState, k: int) -> np.ndarray:
    if k == 0:
        return np.ones(state.coefficients.shape)
    if state.dimension != 2:
        raise UsageError("momentum symbols are defined on 2D tori only")
    x, y = state.lattice_vectors()
    z = x + 1j * y
    r = np.abs(z)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r > 0, z / r, 0)
    return unit**k if k > 0 else np.conj(unit) ** (-k)


def matrix_element(state: GreensState, obs: Observable) -> complex:
    """<Op(a) g, g> for the normalized truncated state g.

    On the Fourier side Op(a) multiplies the shifted coefficient f(xi - zeta) by
    (xi_hat/|xi|)^k for xi != 0; the zero mode only sees the k = 0 components.
    Normalized by the retained coefficient mass, so the constant symbol gives 1.
    """
    c = state.coefficients
    radii = state.index_radius
    conj = np.conj(c)
    total = 0j
    for (zeta, k), a in obs.terms.items():
        if len(zeta) != state.dimension:
            raise UsageError("observable and state dimensions differ")
        if any(2 * abs(z) > r for z, r in zip(zeta, radii)):
            raise CoverageError(f"observable frequency {zeta} exceeds half the coefficient box {radii}")
        total += a * np.sum(_angular_weight(state, k) * _shift(c, zeta) * conj)
    return complex(total / np.sum(np.abs(c) ** 2))


def momentum_profile(state: GreensState, k_max: int) -> np.ndarray:
    """Angular moments <Op(exp(i k phi)) g, g> for k = 1..k_max."""
    if k_max < 1:
        raise UsageError("k_max must be at least 1")
    weights = np.abs(state.coefficients) ** 2
    total = weights.sum()
    x, y = state.lattice_vectors()
    angle = np.arctan2(y, x)
    nonzero = (x != 0) | (y != 0)
    return np.array([np.sum(weights[nonzero] * np.exp(1j * k * angle[nonzero])) / total
                     for k in range(1, k_max + 1)])


@dataclass(frozen=True)
class ScanResult:
    j: np.ndarray
    lam: np.ndarray
    labels: list[str]
    values: np.ndarray
    tail_bounds: np.ndarray

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write("j,lambda,re_M,im_M,zeta_or_k,tail_bound\n")
            for row, (j, lam) in enumerate(zip(self.j.tolist(), self.lam.tolist())):
                for col, label in enumerate(self.labels):
                    v = self.values[row, col]
                    fh.write(f"{j},{lam:.17g},{v.real:.17g},{v.imag:.17g},{label},"
                             f"{self.tail_bounds[row]:.17g}\n")
        return path


def equidistribution_scan(table: NormTable, eigenvalues, x0=None,
                          zetas: Iterable = ((1, 0),), cutoff: float | None = None) -> ScanResult:
    """Position matrix elements M_j(zeta) = <exp(i<zeta,x>) g_j, g_j> for each eigenvalue."""
    js, lams = as_columns(eigenvalues)
    zetas = [tuple(z) for z in zetas]
    values = np.empty((lams.size, len(zetas)), dtype=complex)
    tails = np.empty(lams.size)
    for row, lam in enumerate(lams):
        state = build_greens_state(table, lam, x0, cutoff)
        tails[row] = state.tail_fraction
        for col, z in enumerate(zetas):
            values[row, col] = matrix_element(state, Observable.position(z))
    labels = ["(" + " ".join(str(v) for v in z) + ")" for z in zetas]
    return ScanResult(js, lams, labels, values, tails)


def momentum_scan(table: NormTable, eigenvalues, k_max: int = 4, x0=None,
                  cutoff: float | None = None) -> ScanResult:
    js, lams = as_columns(eigenvalues)
    values = np.empty((lams.size, k_max), dtype=complex)
    tails = np.empty(lams.size)
    for row, lam in enumerate(lams):
        state = build_greens_state(table, lam, x0, cutoff)
        tails[row] = state.tail_fraction
        values[row] = momentum_profile(state, k_max)
    return ScanResult(js, lams, [f"k={k}" for k in range(1, k_max + 1)], values, tails)
