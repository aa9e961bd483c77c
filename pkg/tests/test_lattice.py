import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import GENERIC3, QUARTIC, ROOT2, SQUARE, cached_table
from oracles import float_norms_2d, norm_counter_2d, norm_counter_3d
from pointscatter import (CacheFormatError, CoverageError, PrecisionError, TorusSpec, UsageError,
                          build_norm_table, circle_law_report, counting, distinct_counting,
                          export_csv, load_table, save_table)
from pointscatter.lattice import Aspect, weyl_count


def as_dict(table):
    return dict(table.entries)


# -- aspect and torus parsing ---------------------------------------------

def test_aspect_forms():
    assert Aspect.parse("3/4").exact == Fraction(3, 4)
    assert Aspect.parse("sqrt(2)").kind == "sqrt"
    assert Aspect.parse("irr:1.25").kind == "irrational"
    assert str(Aspect.parse("sqrt(1/3)")) == "sqrt(1/3)"


@pytest.mark.parametrize("text", ["0", "-1", "irr:-2", "sqrt(0)", "abc", "irr:nan"])
def test_aspect_rejects_nonpositive_or_garbage(text):
    with pytest.raises(UsageError):
        TorusSpec.from_strings(text)


def test_rationality_follows_fourth_power():
    assert SQUARE.is_rational
    assert TorusSpec.from_strings("2/3").is_rational
    assert ROOT2.is_rational
    assert not QUARTIC.is_rational
    assert not GENERIC3.is_rational
    assert TorusSpec.from_strings("2", "3").is_rational


def test_area_and_volume():
    assert SQUARE.area_or_volume == pytest.approx(4 * math.pi**2)
    assert GENERIC3.area_or_volume == pytest.approx(8 * math.pi**3)


def test_torus_dict_round_trip():
    for t in (SQUARE, ROOT2, QUARTIC, GENERIC3):
        assert TorusSpec.from_dict(t.to_dict()) == t


# -- enumeration ------------------------------------------------------------

def test_square_table_to_five():
    table = build_norm_table(SQUARE, 5)
    assert as_dict(table) == {0: 1, 1: 4, 2: 4, 4: 4, 5: 8}
    assert table.exact


def test_cutoff_zero_is_origin_only():
    assert as_dict(build_norm_table(SQUARE, 0)) == {0: 1}


@pytest.mark.parametrize("bad", [math.inf, math.nan, -1.0])
def test_bad_cutoff(bad):
    with pytest.raises(UsageError):
        build_norm_table(SQUARE, bad)


@pytest.mark.parametrize("a2", ["1", "2/3", "5", "7/2"])
def test_rational_table_matches_double_loop(a2):
    x = 300
    table = build_norm_table(TorusSpec.from_strings(a2), x)
    ref = norm_counter_2d(Fraction(a2), x)
    keys = sorted(ref)
    assert len(table) == len(keys)
    assert np.allclose(table.norms, [float(k) for k in keys], rtol=1e-15, atol=0)
    assert table.mult.tolist() == [ref[k] for k in keys]


def test_sqrt_aspect_matches_double_loop():
    # a^2 = sqrt(2): norms are (m^2 + 2 n^2)/sqrt(2)
    x = 200
    table = build_norm_table(ROOT2, x)
    ref = sqrt2_counter(x)
    assert table.exact and table.denom_is_sqrt
    assert table.keys.tolist() == sorted(ref)
    assert table.mult.tolist() == [ref[k] for k in sorted(ref)]


def sqrt2_counter(x):
    from collections import Counter
    out = Counter()
    r = int(math.sqrt(2 * x)) + 2
    for m in range(-r, r + 1):
        for n in range(-r, r + 1):
            key = m * m + 2 * n * n
            if key <= x * math.sqrt(2):
                out[key] += 1
    return out


def test_sqrt2_aspect_has_accidental_coincidences():
    # 9 = 3^2 + 2*0^2 = 1^2 + 2*2^2, so the norm 9/sqrt(2) carries 2 + 4 = 6 vectors
    table = build_norm_table(ROOT2, 10)
    i = int(np.searchsorted(table.keys, 9))
    assert table.keys[i] == 9 and table.mult[i] == 6


def test_irrational_multiplicities_are_four_or_two():
    table = build_norm_table(QUARTIC, 10)
    assert not table.exact
    a2 = float(Fraction("1.1892071150027210667174999705604759152929720924638"))
    for n, r in table.entries[1:]:
        on_axis = any(abs(n - k * k / a2) < 1e-9 or abs(n - k * k * a2) < 1e-9 for k in range(1, 5))
        assert r == (2 if on_axis else 4)


def test_declared_irrational_with_hidden_coincidences_raises():
    with pytest.raises(PrecisionError):
        build_norm_table(TorusSpec.from_strings("irr:1.4142135623730950488016887242096980785697"), 50)


def test_irrational_table_matches_float_oracle():
    x = 500
    table = build_norm_table(QUARTIC, x)
    ref = float_norms_2d(2 ** 0.25, x)
    assert int(table.mult.sum()) == ref.size
    expanded = np.repeat(table.norms, table.mult)
    assert np.allclose(expanded, ref, rtol=1e-13)


def test_three_dimensional_rational_table_matches_triple_loop():
    x = 60
    table = build_norm_table(TorusSpec.from_strings("2", "1/3"), x)
    ref = norm_counter_3d(Fraction(2), Fraction(1, 3), x)
    assert table.mult.tolist() == [ref[k] for k in sorted(ref)]


def test_cubic_counts():
    # r_3(n) for n = 0..6 is 1, 6, 12, 8, 6, 24, 24
    table = build_norm_table(TorusSpec.cubic(), 6)
    assert as_dict(table) == {0: 1, 1: 6, 2: 12, 3: 8, 4: 6, 5: 24, 6: 24}


def test_generic_3d_counting_matches_volume_law():
    table = cached_table(GENERIC3, 2e4)
    x = 1e4
    assert counting(table, x) / weyl_count(3, x) == pytest.approx(1, abs=0.01)


def test_parallel_build_is_identical():
    for torus in (SQUARE, QUARTIC, GENERIC3):
        assert build_norm_table(torus, 3000, workers=1) == build_norm_table(torus, 3000, workers=4)


# -- counting -------------------------------------------------------------------

def test_counting_examples():
    table = build_norm_table(SQUARE, 5)
    assert counting(table, 5) == 21
    assert distinct_counting(table, 5) == 5
    assert distinct_counting(table, 0) == 1
    assert counting(table, -1) == 0


def test_counting_beyond_cutoff():
    table = build_norm_table(SQUARE, 5)
    with pytest.raises(CoverageError):
        counting(table, 6)
    with pytest.raises(CoverageError):
        distinct_counting(table, 5.5)


def test_count_up_to_ten_thousand():
    # direct lattice count; oracle value from a numpy double loop
    assert counting(cached_table(SQUARE, 2e4), 1e4) == 31417


def test_distinct_norms_below_hundred():
    assert distinct_counting(cached_table(SQUARE, 2e4), 100) == 44


@given(st.floats(min_value=0, max_value=1000, allow_nan=False))
@settings(max_examples=40, deadline=None)
def test_counting_conserves_lattice_points(x):
    table = cached_table(SQUARE, 1000.0)
    brute = sum(1 for m in range(-32, 33) for n in range(-32, 33) if m * m + n * n <= x)
    assert counting(table, x) == brute


@given(st.sampled_from(["1", "2/3", "sqrt(3)", "5/7"]), st.integers(10, 400))
@settings(max_examples=25, deadline=None)
def test_table_invariants(a2, x):
    table = build_norm_table(TorusSpec.from_strings(a2), x)
    assert table.norms[0] == 0 and table.mult[0] == 1
    assert np.all(np.diff(table.norms) > 0)
    assert np.all(table.mult[1:] % 2 == 0)
    assert np.all(table.mult >= 1)


def test_circle_law_remainder_scaling():
    table = cached_table(SQUARE, 1e6)
    xs = [1e4, 1e5, 1e6]
    reports = [circle_law_report(table, x) for x in xs]
    const = max(abs(r.remainder) / r.x**0.4 for r in reports)
    assert all(abs(r.remainder) <= const * r.x**0.4 for r in reports)
    assert const < 10
    assert all(abs(r.remainder) < r.x**0.5 for r in reports)
    assert reports[0].huxley_exponent == Fraction(131, 416)


def test_norm_labels():
    table = build_norm_table(TorusSpec.from_strings("2/3"), 5)
    assert table.norm_label(1) == "2/3"
    root = build_norm_table(ROOT2, 5)
    assert float(root.norm_label(1)) == pytest.approx(1 / math.sqrt(2), rel=1e-16)


# -- persistence ------------------------------------------------------------

@pytest.mark.parametrize("torus", [SQUARE, ROOT2, QUARTIC, GENERIC3])
def test_save_load_round_trip(tmp_path, torus):
    table = build_norm_table(torus, 2000)
    path = save_table(table, tmp_path / "t.psnt")
    back = load_table(path)
    assert back == table
    assert back.exact == table.exact
    assert back.torus == table.torus


def test_truncated_cache_is_rejected(tmp_path):
    path = save_table(build_norm_table(SQUARE, 500), tmp_path / "t.psnt")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CacheFormatError):
        load_table(path)


def test_flipped_byte_is_rejected(tmp_path):
    path = save_table(build_norm_table(SQUARE, 500), tmp_path / "t.psnt")
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CacheFormatError):
        load_table(path)


def test_wrong_version_is_rejected(tmp_path):
    path = save_table(build_norm_table(SQUARE, 50), tmp_path / "t.psnt")
    data = bytearray(path.read_bytes())
    data[4] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(CacheFormatError):
        load_table(path)


def test_csv_export(tmp_path):
    path = export_csv(build_norm_table(TorusSpec.from_strings("2/3"), 3), tmp_path / "n.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "norm,multiplicity"
    assert lines[1] == "0,1"
    assert lines[2] == "2/3,2"
