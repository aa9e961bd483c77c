"""Dual-lattice norms of flat rectangular tori.

The 2D torus is R^2 / 2*pi*L0 with L0 = Z(a, 0) + Z(0, 1/a); its dual lattice
is {(m/a, n*a)} and the Laplace eigenvalues are the norms m^2/a^2 + n^2*a^2.
The 3D torus uses L0 = Z(a,0,0) + Z(0,b,0) + Z(0,0,1/(ab)) with norms
m^2/a^2 + n^2/b^2 + k^2*a^2*b^2.  Both dual lattices have unit covolume.

Rational lattices (a^4 rational in 2D, a^2 and b^2 rational in 3D) are
enumerated with exact integer keys.  Irrational lattices are enumerated in
extended precision, and any two symmetry orbits whose norms agree to within the
grouping tolerance raise :class:`PrecisionError` instead of being merged.
"""
from __future__ import annotations

import io
import json
import logging
import math
import re
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, Decimal, localcontext
from fractions import Fraction
from functools import cached_property, reduce
from pathlib import Path

import numpy as np

from .errors import CacheFormatError, CoverageError, PrecisionError, UsageError

LOGGER = logging.getLogger(__name__)

HUXLEY_EXPONENT = Fraction(131, 416)
DECIMAL_DIGITS = 50
MAX_EXACT_KEY = 2**62

_SQRT_RE = re.compile(r"^sqrt\(\s*([0-9./\s]+?)\s*\)$")


@dataclass(frozen=True)
class Aspect:
    """An aspect parameter (a^2 or b^2) in exact or declared-irrational form.

    Accepted text forms:

    ``"p/q"``, ``"3"``, ``"1.5"``
        exact rational value of the squared aspect.
    ``"sqrt(p/q)"``
        squared aspect equal to sqrt(p/q); the fourth power is rational.
    ``"irr:<decimal>"``
        user-declared irrational value, given as a decimal literal.
    """

    kind: str
    exact: Fraction | None = None
    digits: str | None = None

    def __post_init__(self):
        if self.kind in ("rational", "sqrt"):
            if self.exact is None or self.exact <= 0:
                raise UsageError(f"aspect must be strictly positive, got {self.exact}")
        elif self.kind == "irrational":
            try:
                value = Decimal(self.digits)
            except Exception as exc:
                raise UsageError(f"not a decimal literal: {self.digits!r}") from exc
            if not value.is_finite() or value <= 0:
                raise UsageError(f"aspect must be strictly positive, got {self.digits}")
        else:
            raise UsageError(f"unknown aspect kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str | int | Fraction | "Aspect") -> "Aspect":
        if isinstance(text, Aspect):
            return text
        if isinstance(text, (int, Fraction)):
            return cls("rational", Fraction(text))
        s = str(text).strip()
        if s.startswith("irr:"):
            return cls("irrational", digits=s[4:].strip())
        match = _SQRT_RE.match(s)
        try:
            if match:
                return cls("sqrt", Fraction(match.group(1).replace(" ", "")))
            return cls("rational", Fraction(s))
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageError(f"cannot parse aspect {s!r}") from exc

    def __str__(self) -> str:
        if self.kind == "rational":
            return str(self.exact)
        if self.kind == "sqrt":
            return f"sqrt({self.exact})"
        return f"irr:{self.digits}"

    def squared(self) -> Decimal:
        """The squared aspect as a high-precision decimal."""
        with localcontext() as ctx:
            ctx.prec = DECIMAL_DIGITS
            if self.kind == "rational":
                return Decimal(self.exact.numerator) / Decimal(self.exact.denominator)
            if self.kind == "sqrt":
                return (Decimal(self.exact.numerator) / Decimal(self.exact.denominator)).sqrt()
            return +Decimal(self.digits)


@dataclass(frozen=True)
class TorusSpec:
    """Geometry of a flat torus: dimension and squared aspect parameters."""

    dimension: int
    aspects: tuple[Aspect, ...]

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise UsageError(f"dimension must be 2 or 3, got {self.dimension}")
        aspects = tuple(Aspect.parse(a) for a in self.aspects)
        if len(aspects) != self.dimension - 1:
            raise UsageError(
                f"a {self.dimension}D torus takes {self.dimension - 1} aspect parameter(s)")
        object.__setattr__(self, "aspects", aspects)

    @classmethod
    def square(cls) -> "TorusSpec":
        return cls(2, ("1",))

    @classmethod
    def cubic(cls) -> "TorusSpec":
        return cls(3, ("1", "1"))

    @classmethod
    def from_strings(cls, aspect: str, aspect_b: str | None = None, dimension: int | None = None):
        if dimension is None:
            dimension = 2 if aspect_b is None else 3
        aspects = (aspect,) if dimension == 2 else (aspect, aspect_b if aspect_b is not None else "1")
        return cls(dimension, aspects)

    @property
    def area_or_volume(self) -> float:
        return (2 * math.pi) ** self.dimension

    @property
    def is_rational(self) -> bool:
        """Rational lattice flag; in 2D this is exactly the condition a^4 in Q."""
        if self.dimension == 2:
            return self.aspects[0].kind in ("rational", "sqrt")
        return all(a.kind == "rational" for a in self.aspects)

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "aspects": [str(a) for a in self.aspects]}

    @classmethod
    def from_dict(cls, data: dict) -> "TorusSpec":
        return cls(int(data["dimension"]), tuple(data["aspects"]))

    def __str__(self) -> str:
        return f"T{self.dimension}[" + ",".join(str(a) for a in self.aspects) + "]"

    def _exact_form(self) -> tuple[tuple[int, ...], int, bool]:
        """Integer coefficients c with key = sum c_i m_i^2 and the norm scale.

        Returns ``(coeffs, denom, denom_is_sqrt)`` so that
        norm = key / denom, or key / sqrt(denom) when ``denom_is_sqrt``.
        """
        if self.dimension == 2:
            a = self.aspects[0]
            a4 = a.exact**2 if a.kind == "rational" else a.exact
            p, q = a4.numerator, a4.denominator
            root = math.isqrt(p * q)
            if root * root == p * q:
                return (q, p), root, False
            return (q, p), p * q, True
        a2, b2 = (x.exact for x in self.aspects)
        coeffs = [1 / a2, 1 / b2, a2 * b2]
        denom = reduce(math.lcm, (c.denominator for c in coeffs))
        return tuple(int(c * denom) for c in coeffs), denom, False

    def _float_coefficients(self) -> tuple[np.longdouble, ...]:
        with localcontext() as ctx:
            ctx.prec = DECIMAL_DIGITS
            if self.dimension == 2:
                a2 = self.aspects[0].squared()
                coeffs = (1 / a2, a2)
            else:
                a2, b2 = (x.squared() for x in self.aspects)
                coeffs = (1 / a2, 1 / b2, a2 * b2)
        return tuple(np.longdouble(str(c)) for c in coeffs)


@dataclass(frozen=True, eq=False)
class NormTable:
    """Sorted distinct norms n_j <= cutoff with multiplicities r(n_j).

    For exact tables ``keys`` holds the integer numerators; the norm is
    ``key / denom`` (or ``key / sqrt(denom)`` when ``denom_is_sqrt``).
    """

    torus: TorusSpec
    cutoff: float
    norms: np.ndarray
    mult: np.ndarray
    keys: np.ndarray | None = None
    denom: int = 1
    denom_is_sqrt: bool = False
    rel_tol: float | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("norms", "mult", "keys"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, copy=True)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def exact(self) -> bool:
        return self.keys is not None

    @property
    def entries(self) -> list[tuple[float, int]]:
        return list(zip(self.norms.tolist(), self.mult.tolist()))

    def __len__(self) -> int:
        return len(self.norms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NormTable):
            return NotImplemented
        same_keys = (self.keys is None and other.keys is None) or (
            self.keys is not None and other.keys is not None
            and np.array_equal(self.keys, other.keys))
        return (self.torus == other.torus
                and float(self.cutoff).hex() == float(other.cutoff).hex()
                and self.denom == other.denom
                and self.denom_is_sqrt == other.denom_is_sqrt
                and same_keys
                and np.array_equal(self.norms.view(np.uint64), other.norms.view(np.uint64))
                and np.array_equal(self.mult, other.mult))

    @cached_property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.mult)

    def count_le(self, x: float) -> int:
        """Number of distinct norms <= x (no range check)."""
        if x < 0:
            return 0
        if self.exact:
            bound = _key_bound(x, self.denom, self.denom_is_sqrt)
            return int(np.searchsorted(self.keys, bound, side="right"))
        return int(np.searchsorted(self.norms, x, side="right"))

    def norm_label(self, i: int) -> str:
        """Norm as an exact fraction for rational keys, else 17 significant digits."""
        if self.exact and not self.denom_is_sqrt:
            return str(Fraction(int(self.keys[i]), self.denom))
        return format(float(self.norms[i]), ".17g")


def _key_bound(x: float, denom: int, is_sqrt: bool) -> int:
    """Largest integer key with key/denom <= x (or key/sqrt(denom) <= x)."""
    if not is_sqrt:
        return math.floor(Fraction(x) * denom)
    with localcontext() as ctx:
        ctx.prec = DECIMAL_DIGITS
        bound = Decimal(Fraction(x).numerator) / Decimal(Fraction(x).denominator)
        bound *= Decimal(denom).sqrt()
        return int(bound.to_integral_value(rounding=ROUND_FLOOR))


def _nonneg_points(coeffs, bound, first_range):
    """Nonnegative index tuples with sum c_i m_i^2 <= bound, exact integers.

    The first coordinate is restricted to ``first_range``.  Returns the
    integer keys and the orbit sizes (number of sign choices).
    """
    c1 = coeffs[0]
    m = np.arange(first_range.start, first_range.stop, dtype=np.int64)
    rest = bound - c1 * m * m
    m = m[rest >= 0]
    rest = rest[rest >= 0]
    keys = c1 * m * m
    weight = np.where(m > 0, 2, 1).astype(np.int64)
    for c in coeffs[1:]:
        top = np.array([math.isqrt(int(r) // c) for r in rest], dtype=np.int64)
        counts = top + 1
        offsets = np.cumsum(counts) - counts
        base_key = np.repeat(keys, counts)
        base_w = np.repeat(weight, counts)
        base_rest = np.repeat(rest, counts)
        idx = np.arange(counts.sum(), dtype=np.int64) - np.repeat(offsets, counts)
        part = c * idx * idx
        keys = base_key + part
        rest = base_rest - part
        weight = base_w * np.where(idx > 0, 2, 1)
    return keys, weight


def _nonneg_points_float(coeffs, cutoff, first_range):
    """Extended-precision analogue of :func:`_nonneg_points`."""
    x = np.longdouble(cutoff)
    m = np.arange(first_range.start, first_range.stop, dtype=np.int64)
    vals = coeffs[0] * m.astype(np.longdouble) ** 2
    keep = vals <= x
    m, vals = m[keep], vals[keep]
    weight = np.where(m > 0, 2, 1).astype(np.int64)
    m_sq = [m * m]
    for c in coeffs[1:]:
        top = np.floor(np.sqrt(np.maximum((x - vals) / c, 0))).astype(np.int64) + 1
        counts = top + 1
        offsets = np.cumsum(counts) - counts
        idx = np.arange(counts.sum(), dtype=np.int64) - np.repeat(offsets, counts)
        vals = np.repeat(vals, counts) + c * idx.astype(np.longdouble) ** 2
        weight = np.repeat(weight, counts) * np.where(idx > 0, 2, 1)
        m_sq = [np.repeat(s, counts) for s in m_sq] + [idx * idx]
        keep = vals <= x
        vals, weight = vals[keep], weight[keep]
        m_sq = [s[keep] for s in m_sq]
    return vals, weight, m_sq


def _split(stop: int, parts: int) -> list[range]:
    edges = np.linspace(0, stop, max(1, parts) + 1).astype(int)
    return [range(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def build_norm_table(torus: TorusSpec, cutoff: float, *, workers: int = 1,
                     rel_tol: float | None = None) -> NormTable:
    """Enumerate all distinct dual-lattice norms <= cutoff with multiplicities.

    Parameters
    ----------
    torus : TorusSpec
    cutoff : float
        Energy bound X; the table is complete on [0, X].
    workers : int
        Number of disjoint ranges of the first index enumerated concurrently.
        The merged table does not depend on this value.
    rel_tol : float, optional
        Relative grouping tolerance for irrational lattices.  Defaults to
        1e-12 in 2D and 1e-15 in 3D.

    Raises
    ------
    UsageError
        Cutoff negative or not finite.
    PrecisionError
        Two symmetry orbits of an irrational lattice have norms within
        ``rel_tol`` of each other.
    """
    cutoff = float(cutoff)
    if not math.isfinite(cutoff) or cutoff < 0:
        raise UsageError(f"cutoff must be finite and nonnegative, got {cutoff}")
    if torus.is_rational:
        return _build_exact(torus, cutoff, workers)
    return _build_float(torus, cutoff, workers, rel_tol)


def _key_norms(keys, denom, is_sqrt):
    # int64 -> float64 division is correctly rounded while keys < 2**53
    scale = np.float64(math.sqrt(denom)) if is_sqrt else np.float64(denom)
    return keys.astype(np.float64) / scale


def _build_exact(torus, cutoff, workers):
    coeffs, denom, is_sqrt = torus._exact_form()
    bound = _key_bound(cutoff, denom, is_sqrt)
    if bound > MAX_EXACT_KEY // 2:
        raise UsageError(f"cutoff {cutoff} too large for exact 64-bit keys")
    m_stop = math.isqrt(bound // coeffs[0]) + 1
    ranges = _split(m_stop, workers)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(lambda r: _nonneg_points(coeffs, bound, r), ranges))
    keys = np.concatenate([p[0] for p in parts])
    weight = np.concatenate([p[1] for p in parts])
    uniq, inverse = np.unique(keys, return_inverse=True)
    mult = np.bincount(inverse, weights=weight).astype(np.int64)
    norms = _key_norms(uniq, denom, is_sqrt)
    return NormTable(torus, cutoff, norms, mult, keys=uniq, denom=denom, denom_is_sqrt=is_sqrt)


def _build_float(torus, cutoff, workers, rel_tol):
    if rel_tol is None:
        rel_tol = 1e-12 if torus.dimension == 2 else 1e-15
    if rel_tol < 1e-16:
        raise UsageError("grouping tolerance below float64 resolution")
    coeffs = torus._float_coefficients()
    m_stop = int(math.isqrt(int(cutoff / float(coeffs[0])) + 1)) + 2
    ranges = _split(m_stop, workers)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(lambda r: _nonneg_points_float(coeffs, cutoff, r), ranges))
    vals = np.concatenate([p[0] for p in parts])
    weight = np.concatenate([p[1] for p in parts])
    squares = [np.concatenate([p[2][i] for p in parts]) for i in range(torus.dimension)]
    order = np.lexsort((*squares[::-1], vals))
    vals, weight = vals[order], weight[order]
    squares = [s[order] for s in squares]
    gaps = np.diff(vals)
    close = np.nonzero(gaps <= rel_tol * vals[1:])[0]
    if close.size:
        i = int(close[0])
        a = tuple(int(math.isqrt(int(s[i]))) for s in squares)
        b = tuple(int(math.isqrt(int(s[i + 1]))) for s in squares)
        raise PrecisionError(
            f"{close.size} norm pair(s) within relative tolerance {rel_tol:g} on {torus}; "
            f"first: indices {a} and {b} at norm {float(vals[i]):.17g}. "
            "The lattice is probably not irrational; use an exact aspect form.")
    return NormTable(torus, cutoff, vals.astype(np.float64), weight, rel_tol=rel_tol)


def _check_range(table: NormTable, x: float):
    if x > table.cutoff:
        raise CoverageError(f"x={x} exceeds the table cutoff {table.cutoff}")


def counting(table: NormTable, x: float) -> int:
    """Lattice point count: sum of r(n_j) over n_j <= x."""
    _check_range(table, x)
    k = table.count_le(x)
    return int(table.cumulative[k - 1]) if k else 0


def distinct_counting(table: NormTable, x: float) -> int:
    """Number of distinct norms n_j <= x."""
    _check_range(table, x)
    return table.count_le(x)


def weyl_count(dimension: int, x: float) -> float:
    """Leading term of the lattice point count for a unit-covolume lattice."""
    if x <= 0:
        return 0.0
    return math.pi * x if dimension == 2 else 4.0 / 3.0 * math.pi * x**1.5


def weyl_density(dimension: int, t: float) -> float:
    return math.pi if dimension == 2 else 2.0 * math.pi * math.sqrt(t)


@dataclass(frozen=True)
class CircleLawReport:
    x: float
    lattice_count: int
    remainder: float
    distinct_count: int
    huxley_exponent: Fraction = HUXLEY_EXPONENT


def circle_law_report(table: NormTable, x: float) -> CircleLawReport:
    count = counting(table, x)
    return CircleLawReport(
        x=x,
        lattice_count=count,
        remainder=count - weyl_count(table.torus.dimension, x),
        distinct_count=distinct_counting(table, x),
    )


# -- persistence ---------------------------------------------------------

MAGIC = b"PSNT"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sHI")


def save_table(table: NormTable, path) -> Path:
    """Write ``table`` to a binary cache file.

    Layout: magic, version, header length, JSON header, zlib payload of
    delta-encoded keys (or float bit patterns) and multiplicities, CRC32.
    """
    path = Path(path)
    header = {
        "torus": table.torus.to_dict(),
        "cutoff": float(table.cutoff).hex(),
        "exact": table.exact,
        "denom": table.denom,
        "denom_is_sqrt": table.denom_is_sqrt,
        "rel_tol": table.rel_tol,
        "count": len(table),
    }
    head = json.dumps(header, sort_keys=True).encode()
    if table.exact:
        ordinal = table.keys.astype(np.int64)
    else:
        ordinal = table.norms.view(np.uint64).astype(np.int64)
    deltas = np.diff(ordinal, prepend=np.int64(0))
    payload = zlib.compress(deltas.astype("<i8").tobytes() + table.mult.astype("<i8").tobytes())
    buf = io.BytesIO()
    buf.write(_HEAD.pack(MAGIC, FORMAT_VERSION, len(head)))
    buf.write(head)
    buf.write(struct.pack("<Q", len(payload)))
    buf.write(payload)
    body = buf.getvalue()
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    return path


def load_table(path) -> NormTable:
    """Read a table written by :func:`save_table`."""
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + 4 or data[:4] != MAGIC:
        raise CacheFormatError(f"{path}: not a norm table file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CacheFormatError(f"{path}: checksum mismatch (truncated or corrupt)")
    _, version, head_len = _HEAD.unpack_from(body)
    if version != FORMAT_VERSION:
        raise CacheFormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        offset = _HEAD.size
        header = json.loads(body[offset:offset + head_len])
        offset += head_len
        (size,) = struct.unpack_from("<Q", body, offset)
        raw = zlib.decompress(body[offset + 8:offset + 8 + size])
        count = header["count"]
        arr = np.frombuffer(raw, dtype="<i8")
        if arr.size != 2 * count:
            raise ValueError("payload length mismatch")
        ordinal = np.cumsum(arr[:count]).astype(np.int64)
        mult = arr[count:].astype(np.int64)
        torus = TorusSpec.from_dict(header["torus"])
        cutoff = float.fromhex(header["cutoff"])
    except (ValueError, KeyError, struct.error, zlib.error) as exc:
        raise CacheFormatError(f"{path}: corrupt payload ({exc})") from exc
    if header["exact"]:
        denom, is_sqrt = header["denom"], header["denom_is_sqrt"]
        norms = _key_norms(ordinal, denom, is_sqrt)
        return NormTable(torus, cutoff, norms, mult, keys=ordinal, denom=denom,
                         denom_is_sqrt=is_sqrt)
    norms = ordinal.astype(np.uint64).view(np.float64)
    return NormTable(torus, cutoff, norms, mult, rel_tol=header.get("rel_tol"))


def export_csv(table: NormTable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("norm,multiplicity\n")
        for i, r in enumerate(table.mult.tolist()):
            fh.write(f"{table.norm_label(i)},{r}\n")
    return path
