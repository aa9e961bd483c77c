"""Spacing and gap statistics of norms and new eigenvalues.

Spacings are taken between consecutive distinct values (multiplicities are
ignored) and normalized by their mean over the window.  Two reference
distributions are available: Poisson (exponential spacings, CDF 1 - exp(-s))
and semi-Poisson (density 4 s exp(-2s)).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .errors import CoverageError, UsageError
from .lattice import NormTable
from .spectrum import as_columns

LOGGER = logging.getLogger(__name__)

HIST_BINS = 50
HIST_RANGE = (0.0, 5.0)
MIN_GAPS = 10
TREND_SLOPE = 0.05


def poisson_cdf(s):
    s = np.maximum(np.asarray(s, dtype=float), 0.0)
    return -np.expm1(-s)


def semi_poisson_cdf(s):
    s = np.maximum(np.asarray(s, dtype=float), 0.0)
    return 1.0 - (1.0 + 2.0 * s) * np.exp(-2.0 * s)


REFERENCES = {"poisson": poisson_cdf, "semi-poisson": semi_poisson_cdf}


def ks_distance(sample, reference="poisson") -> float:
    """Kolmogorov-Smirnov distance between a sample and a named reference CDF."""
    sample = np.asarray(sample, dtype=float)
    if sample.size == 0:
        raise UsageError("empty sample")
    cdf = REFERENCES[reference] if isinstance(reference, str) else reference
    return float(sps.kstest(sample, cdf).statistic)


@dataclass(frozen=True)
class SpacingReport:
    x: float
    count: int
    mean_spacing: float
    normalized: np.ndarray
    bin_edges: np.ndarray
    density: np.ndarray
    ks_vs_poisson: float
    ks_vs_semipoisson: float

    def small_fraction(self, s: float = 0.2) -> float:
        """Share of normalized spacings below s."""
        return float(np.mean(self.normalized < s))

    def to_dict(self) -> dict:
        return {
            "x": self.x, "count": self.count, "mean_spacing": self.mean_spacing,
            "ks_vs_poisson": self.ks_vs_poisson, "ks_vs_semipoisson": self.ks_vs_semipoisson,
            "small_fraction_0.2": self.small_fraction(0.2),
        }

    def histogram_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            fh.write("bin_left,bin_right,density\n")
            for lo, hi, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.density):
                fh.write(f"{lo:.17g},{hi:.17g},{d:.17g}\n")
        return path


def _window(sequence, x: float) -> np.ndarray:
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 1:
        raise UsageError("sequence must be one-dimensional")
    if np.any(np.diff(seq) <= 0):
        raise UsageError("sequence must be strictly increasing")
    return seq[seq <= x]


def normalized_spacings(sequence, x: float) -> tuple[np.ndarray, float]:
    gaps = np.diff(_window(sequence, x))
    if gaps.size < MIN_GAPS:
        raise CoverageError(f"only {gaps.size} spacings below x={x:g}; need at least {MIN_GAPS}")
    mean = float(gaps.mean())
    return gaps / mean, mean


def spacing_report(sequence, x: float, *, bins: int = HIST_BINS, hist_range=HIST_RANGE) -> SpacingReport:
    """Normalized spacing statistics of the sorted values up to x.

    The histogram is density-normalized over its own range, so it integrates to
    one over the spacings that fall inside it.
    """
    norm, mean = normalized_spacings(sequence, x)
    density, edges = np.histogram(norm, bins=bins, range=hist_range, density=True)
    return SpacingReport(
        x=float(x), count=int(norm.size), mean_spacing=mean, normalized=norm,
        bin_edges=edges, density=density,
        ks_vs_poisson=ks_distance(norm, "poisson"),
        ks_vs_semipoisson=ks_distance(norm, "semi-poisson"))


def compare_spacings(seq_a, seq_b, x: float) -> float:
    """Two-sample KS distance between the normalized spacings of two sequences."""
    a, _ = normalized_spacings(seq_a, x)
    b, _ = normalized_spacings(seq_b, x)
    return float(sps.ks_2samp(a, b).statistic)


@dataclass(frozen=True)
class GapReport:
    x: float
    count: int
    mean_d: float
    mean_delta: float

    @property
    def ratio(self) -> float:
        return self.mean_d / self.mean_delta

    @property
    def log_weighted_ratio(self) -> float:
        return self.ratio * math.log(self.x)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(ratio=self.ratio, log_weighted_ratio=self.log_weighted_ratio)
        return out


def gap_report(table: NormTable, eigenvalues, x: float) -> GapReport:
    """Mean gap n_j - lambda_j against the mean norm spacing, over 1 <= j with n_j <= x.

    The ground state has no left neighbour and is left out of both means.

    Raises
    ------
    CoverageError
        Some interval (n_{j-1}, n_j) with n_j <= x has no eigenvalue.
    """
    if x > table.cutoff:
        raise CoverageError(f"x={x:g} beyond the table cutoff {table.cutoff:g}")
    count = int(np.searchsorted(table.norms, x, side="right"))
    if count < 2:
        raise CoverageError(f"no spacings below x={x:g}")
    js, lams = as_columns(eigenvalues)
    lam_by_j = dict(zip(js.tolist(), lams.tolist()))
    missing = [j for j in range(1, count) if j not in lam_by_j]
    if missing:
        shown = ", ".join(str(j) for j in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise CoverageError(f"missing eigenvalues for intervals j = {shown}{more}")
    idx = np.arange(1, count)
    d = table.norms[idx] - np.array([lam_by_j[j] for j in idx.tolist()])
    delta = np.diff(table.norms[:count])
    return GapReport(x=float(x), count=int(idx.size), mean_d=float(d.mean()), mean_delta=float(delta.mean()))


def trend_slope(xs, values) -> float:
    """Least-squares slope of values against log x."""
    xs = np.asarray(xs, dtype=float)
    if xs.size < 3:
        raise UsageError("a trend needs at least 3 thresholds")
    return float(np.polyfit(np.log(xs), np.asarray(values, dtype=float), 1)[0])


def is_bounded_trend(xs, values, limit: float = TREND_SLOPE) -> bool:
    return abs(trend_slope(xs, values)) < limit


def poisson_sample(n: int, seed=None) -> np.ndarray:
    """Cumulative sums of n unit exponential spacings starting at 0."""
    rng = np.random.default_rng(seed)
    return np.concatenate([[0.0], np.cumsum(rng.exponential(size=n))])


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path
