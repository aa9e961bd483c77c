import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import GENERIC3, QUARTIC, ROOT2, SQUARE, cached_table
from oracles import quadrature_norm_sq, quadrature_position
from pointscatter import CoverageError, PoleError, TorusSpec, UsageError, Weak, solve_weak
from pointscatter.greens import (GreensState, Observable, build_greens_state, equidistribution_scan,
                                 matrix_element, momentum_profile, momentum_scan)


def square_state(lam, x0=(0.0, 0.0), cutoff=None):
    return build_greens_state(cached_table(SQUARE, 2e4), lam, x0, cutoff)


# -- construction ---------------------------------------------------------------

def test_origin_scatterer_gives_real_resolvent_coefficients():
    state = square_state(3.3)
    c = state.coefficient((1, 2))
    assert c.imag == 0 and c.real == pytest.approx(1 / (5 - 3.3), rel=1e-15)
    assert state.coefficient((0, 0)).real == pytest.approx(-1 / 3.3, rel=1e-15)
    assert np.all(state.coefficients.imag == 0)


def test_hermitian_symmetry():
    state = square_state(7.1, (0.4, 2.2))
    c = state.coefficients
    assert np.allclose(c[::-1, ::-1], np.conj(c), rtol=1e-13, atol=0)


def test_norm_is_retained_mass_plus_tail():
    state = square_state(12.7, (0.1, 0.2))
    assert state.retained_sq + state.tail_mass == pytest.approx(state.l2_norm_sq, rel=1e-12)
    assert state.tail_fraction < 1e-4


@pytest.mark.parametrize("torus, lam", [(SQUARE, 0.23), (SQUARE, 97.5), (ROOT2, 3.3), (QUARTIC, 41.2)])
def test_quadrature_norm(torus, lam):
    state = build_greens_state(cached_table(torus, 2e4), lam, (0.7, 1.9))
    ratio = quadrature_norm_sq(state) / state.l2_norm_sq
    assert ratio == pytest.approx(1 - state.tail_fraction, rel=1e-10)
    assert abs(ratio - 1) < 1e-3


def test_three_dimensional_parseval():
    state = build_greens_state(cached_table(GENERIC3, 2e3), 5.5, (0.1, 0.2, 0.3))
    assert state.dimension == 3
    assert state.retained_sq + state.tail_mass == pytest.approx(state.l2_norm_sq, rel=1e-12)
    ratio = quadrature_norm_sq(state, size=96) / state.l2_norm_sq
    assert ratio == pytest.approx(1 - state.tail_fraction, rel=1e-10)


def test_construction_errors():
    table = cached_table(SQUARE, 2e4)
    with pytest.raises(PoleError):
        build_greens_state(table, 5.0)
    with pytest.raises(CoverageError):
        build_greens_state(table, 10.5, cutoff=500)
    with pytest.raises(CoverageError):
        build_greens_state(table, 10.5, cutoff=5e4)
    with pytest.raises(CoverageError):
        build_greens_state(table, 10.5, cutoff=2e3, max_tail_fraction=1e-9)
    with pytest.raises(UsageError):
        build_greens_state(table, 10.5, (0.0,))


@pytest.mark.parametrize("eps", [1e-2, 1e-3, 1e-4])
def test_pole_concentration(eps):
    table = cached_table(SQUARE, 2e4)
    n = table.norms[6]
    state = build_greens_state(table, n - eps)
    # mass off the circle is bounded by eps^2 * sum over other norms of r/(m-n)^2
    assert 1 - state.mass_fraction(n) < 50 * eps**2


# -- matrix elements ----------------------------------------------------------

@given(st.floats(-50, 3000), st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi))
@settings(max_examples=30, deadline=None)
def test_constant_symbol_gives_one(lam, x, y):
    table = cached_table(SQUARE, 2e4)
    if np.min(np.abs(table.norms - lam)) < 1e-6:
        return
    state = build_greens_state(table, lam, (x, y))
    value = matrix_element(state, Observable.constant())
    assert abs(value - 1) < 1e-12


@given(st.integers(-3, 3), st.integers(-3, 3), st.floats(0.1, 400))
@settings(max_examples=25, deadline=None)
def test_real_symbols_give_real_values(p, q, lam):
    table = cached_table(SQUARE, 2e4)
    if np.min(np.abs(table.norms - lam)) < 1e-6:
        return
    state = build_greens_state(table, lam, (0.3, 1.1))
    cos_symbol = Observable({((p, q), 0): 0.5, ((-p, -q), 0): 0.5})
    mixed = Observable({((p, q), 2): 0.5j, ((-p, -q), -2): -0.5j})
    assert cos_symbol.is_real() and mixed.is_real()
    assert abs(matrix_element(state, cos_symbol).imag) < 1e-12
    assert abs(matrix_element(state, mixed).imag) < 1e-12


@pytest.mark.parametrize("torus, zeta", [(SQUARE, (1, 0)), (SQUARE, (2, -1)), (ROOT2, (1, 2)), (QUARTIC, (0, 3))])
def test_position_element_matches_quadrature(torus, zeta):
    state = build_greens_state(cached_table(torus, 2e4), 23.9, (0.5, 1.3))
    cart = tuple(z * s for z, s in zip(zeta, state.lattice_scale))
    ref = quadrature_position(state, cart)
    # both sides see the same truncated series, so agreement is far below 1e-3
    assert abs(matrix_element(state, Observable.position(zeta)) - ref) < 1e-12


def test_momentum_four_on_diagonal_quartet():
    # near n = 2 the state sits on (+-1, +-1), all at angles with exp(4i phi) = -1
    table = cached_table(SQUARE, 2e4)
    state = build_greens_state(table, 2 - 1e-4)
    value = matrix_element(state, Observable.momentum(4))
    c = state.coefficient((1, 1))
    quartet = 4 * abs(c) ** 2 * -1
    total = np.sum(np.abs(state.coefficients) ** 2)
    rest = 1 - state.mass_fraction(2.0)
    assert value.real == pytest.approx(quartet / total, abs=rest + 1e-12)
    assert value.real < -0.999


def test_momentum_localised_on_single_pair():
    # a^2 = 2/3: the norm 3/2 comes only from (+-1, 0), one direction
    table = cached_table(TorusSpec.from_strings("2/3"), 2e4)
    state = build_greens_state(table, 1.5 - 1e-5)
    moments = momentum_profile(state, 4)
    assert abs(moments[1]) > 0.999
    assert abs(moments[0]) < 1e-12


def test_isotropic_toy_state_has_flat_momentum():
    # unit coefficients on the 12 lattice points of the circle m^2 + n^2 = 25
    r = 5
    grid = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    coeffs = ((grid[0] ** 2 + grid[1] ** 2) == 25).astype(complex)
    toy = GreensState(lam=24.0, x0=(0.0, 0.0), coefficients=coeffs, index_radius=(r, r),
                      lattice_scale=(1.0, 1.0), norm_grid=np.full(coeffs.shape, 25.0),
                      l2_norm_sq=1.0, tail_mass=0.0, coefficient_cutoff=25.0)
    assert np.allclose(momentum_profile(toy, 3), 0, atol=1e-15)


def test_observable_beyond_box_is_rejected():
    state = square_state(3.3)
    with pytest.raises(CoverageError):
        matrix_element(state, Observable.position((200, 0)))


def test_momentum_needs_positive_order():
    with pytest.raises(UsageError):
        momentum_profile(square_state(3.3), 0)


def test_unreal_observable_detected():
    assert not Observable({((1, 0), 0): 1.0}).is_real()


# -- scans ----------------------------------------------------------------------

def test_scan_with_zero_frequency_is_one(tmp_path):
    table = cached_table(SQUARE, 2e4)
    spec = solve_weak(table, Weak(0.0), range(1, 15))
    scan = equidistribution_scan(table, spec, (0.2, 0.9), [(0, 0), (1, 0)])
    assert np.allclose(scan.values[:, 0], 1, atol=1e-12)
    assert scan.magnitudes.shape == (14, 2)
    lines = scan.to_csv(tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "j,lambda,re_M,im_M,zeta_or_k,tail_bound"
    assert len(lines) == 1 + 28


def test_scan_accepts_record_lists():
    table = cached_table(SQUARE, 2e4)
    spec = solve_weak(table, Weak(0.0), range(1, 5))
    a = equidistribution_scan(table, spec, None, [(1, 1)])
    b = equidistribution_scan(table, list(spec), None, [(1, 1)])
    assert np.array_equal(a.values, b.values)


def test_momentum_scan_shape():
    table = cached_table(SQUARE, 2e4)
    spec = solve_weak(table, Weak(0.0), range(1, 5))
    scan = momentum_scan(table, spec, 3)
    assert scan.values.shape == (4, 3) and scan.labels == ["k=1", "k=2", "k=3"]
