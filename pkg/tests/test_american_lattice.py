import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semibasis.american_lattice import (
    LatticeError,
    adaptive_gauss_legendre,
    build_lattice,
    crr_batch,
    decomposition_price,
    early_exercise_premium,
    extract_boundary,
    lattice_delta,
    lattice_price,
)
from semibasis.bs_core import Kind, MarketState, OptionSpec, Style, euro_delta, euro_price, to_bm_coords


def spec(kind="put", style="american", K=100.0, T=1.0):
    return OptionSpec(Kind(kind), Style(style), K, T)


def test_one_step_tree_by_hand():
    lat = build_lattice(1.0, 0.0, 0.0, 0.2, 1)
    assert lat.up_factor == pytest.approx(1.22140, abs=1e-5)
    assert lat.down_factor == pytest.approx(0.81873, abs=1e-5)
    # (1 - d)/(u - d) with unrounded factors; 0.45018 if the rounded u, d are used
    assert lat.p_star == pytest.approx((1 - math.exp(-0.2)) / (math.exp(0.2) - math.exp(-0.2)), abs=1e-15)
    assert lat.p_star == pytest.approx(0.45018, abs=2e-5)
    assert lat.up_factor * lat.down_factor == pytest.approx(1.0, abs=1e-15)
    # only the up node pays: p* (100 u - 100)
    hand = lat.p_star * (100 * lat.up_factor - 100)
    price = lattice_price(spec("call", "european"), MarketState(100, 0, 0, 0, 0.2), 1)
    assert price == pytest.approx(hand, abs=1e-12)
    assert round(price, 3) == 9.967


def test_invalid_probability_is_rejected():
    with pytest.raises(LatticeError):
        build_lattice(10.0, 0.5, 0.0, 0.05, 1)


def test_zero_steps_rejected():
    with pytest.raises(ValueError):
        build_lattice(1.0, 0.05, 0.0, 0.2, 0)


def test_european_call_converges():
    s, m = spec("call", "european"), MarketState(100, 0, 0.06, 0, 0.2)
    bs = euro_price(s, m)
    assert bs == pytest.approx(10.989, abs=1e-3)
    assert abs(lattice_price(s, m, 1000) - bs) < 0.01


def test_european_error_decays_with_steps():
    s, m = spec("put", "european"), MarketState(100, 0, 0.05, 0.01, 0.25)
    bs = euro_price(s, m)
    errs = [abs(lattice_price(s, m, n) - bs) for n in (50, 200, 1000)]
    assert errs[0] > errs[1] > errs[2]


def test_deep_itm_american_put_is_intrinsic():
    assert lattice_price(spec(), MarketState(1, 0, 0.05, 0, 0.2), 200) == pytest.approx(99.0, abs=1e-9)
    assert lattice_delta(spec(), MarketState(1, 0, 0.05, 0, 0.2), 200) == pytest.approx(-1.0, abs=1e-12)


def test_european_lattice_delta_vs_analytic():
    s, m = spec("call", "european"), MarketState(100, 0, 0.05, 0, 0.2)
    assert abs(lattice_delta(s, m, 2000) - euro_delta(s, m)) < 5e-3


@settings(max_examples=30, deadline=None)
@given(st.floats(60, 140), st.floats(0.05, 2), st.floats(0, 0.1), st.floats(0.1, 0.5))
def test_american_dominates_european(S, tau, r, sigma):
    m = MarketState(S, 0, r, 0.0, sigma)
    for kind in ("call", "put"):
        a = lattice_price(spec(kind, "american", T=tau), m, 200)
        e = lattice_price(spec(kind, "european", T=tau), m, 200)
        assert a >= e - 1e-12
        # node assets are products of up-factors, so allow a few ulps
        assert a >= max((S - 100) if kind == "call" else (100 - S), 0.0) * (1 - 1e-12)
    d = lattice_delta(spec("put", T=tau), m, 200)
    assert -1.0 - 1e-12 <= d <= 1e-12


def test_zero_rate_put_has_no_premium():
    m = MarketState(100, 0, 0.0, 0.0, 0.2)
    a = lattice_price(spec(), m, 2000)
    assert abs(a - euro_price(spec(style="european"), m)) < 1e-3
    assert a == pytest.approx(lattice_price(spec(style="european"), m, 2000), abs=1e-12)


def test_batch_matches_single_pricing():
    S = np.array([80.0, 100.0, 120.0])
    price, delta = crr_batch(Kind.PUT, True, S, 100.0, 0.5, 0.05, 0.0, 0.3, 300)
    for i, s in enumerate(S):
        m = MarketState(s, 0, 0.05, 0, 0.3)
        assert price[i] == pytest.approx(lattice_price(spec(T=0.5), m, 300), abs=1e-12)
        assert delta[i] == pytest.approx(lattice_delta(spec(T=0.5), m, 300), abs=1e-12)


def test_boundary_is_empty_for_zero_rate():
    assert extract_boundary(spec(), MarketState(100, 0, 0.0, 0.0, 0.2), 500).empty


def test_boundary_requires_american_put():
    with pytest.raises(ValueError):
        extract_boundary(spec("call"), MarketState(100, 0, 0.06, 0.0, 0.2), 100)


def test_boundary_shape():
    m = MarketState(100, 0, 0.06, 0.0, 0.2)
    n = 5000
    b = extract_boundary(spec(), m, n)
    assert not b.empty
    assert np.all(np.diff(b.u) > 0) and b.u[-1] == 0.0
    assert np.all(np.diff(b.level) >= 0)  # nondecreasing toward expiry
    assert np.all(b.level <= 100.0)
    spacing = 100 * (math.exp(0.2 * math.sqrt(1.0 / n)) - 1)
    assert 100 - b.level[-1] <= 2 * spacing


def test_boundary_coverage_error():
    m = MarketState(100, 0, 0.06, 0.0, 0.2)
    b = extract_boundary(spec(T=0.5), m, 200)
    coords = to_bm_coords(spec(), m)  # needs u from -0.04, the boundary only reaches -0.02
    with pytest.raises(ValueError):
        early_exercise_premium(b, coords, spec(), m)


def test_premium_zero_rate():
    m = MarketState(100, 0, 0.0, 0.0, 0.2)
    _, prem = decomposition_price(spec(), m, 200)
    assert prem == 0.0


def test_premium_vanishes_far_out_of_the_money():
    m = MarketState(1e4, 0, 0.06, 0.0, 0.2)
    _, prem = decomposition_price(spec(), m, 1000)
    assert prem < 1e-10


@pytest.mark.parametrize("d", [0.0, 0.02])
def test_decomposition_matches_lattice_at_the_money(d):
    m = MarketState(100, 0, 0.06, d, 0.2)
    e, prem = decomposition_price(spec(), m, 5000)
    target = lattice_price(spec(), m, 5000)
    assert abs(e + prem - target) <= max(0.005 * target, 0.01)


@pytest.mark.parametrize("S", [80.0, 90.0, 110.0, 120.0])
@pytest.mark.parametrize("T", [0.25, 0.5])
def test_decomposition_grid(S, T):
    m = MarketState(S, 0, 0.06, 0.0, 0.2)
    e, prem = decomposition_price(spec(T=T), m, 2000)
    target = lattice_price(spec(T=T), m, 2000)
    assert abs(e + prem - target) <= max(0.005 * target, 0.01)


def test_adaptive_quadrature_kinked_integrand():
    val = adaptive_gauss_legendre(lambda x: np.abs(x - 0.3), 0.0, 1.0, rtol=1e-10, breaks=[0.3])
    assert val == pytest.approx(0.5 * (0.09 + 0.49), rel=1e-12)
    smooth = adaptive_gauss_legendre(np.exp, 0.0, 2.0, rtol=1e-12)
    assert smooth == pytest.approx(math.e**2 - 1, rel=1e-12)
