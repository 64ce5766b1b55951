import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semibasis.bs_core import Kind, OptionSpec, Style, bs_delta, bs_price
from semibasis.hedge_lab import (
    GbmParams,
    HedgeError,
    HedgeReport,
    american_study,
    bs_frequency_study,
    hedging_measures,
    kappa_measure,
    run_hedge,
    simulate_gbm,
)
from semibasis.spline_pricer import Knots, SplinePricerModel


def test_zero_vol_path_is_deterministic_growth():
    p = GbmParams(100, 0.07, 0.0, 2.0, 253, 1)
    path = simulate_gbm(p)[0]
    assert path[-1] == pytest.approx(100 * math.exp(0.07 * 2.0), rel=1e-13)


def test_terminal_mean_matches_lognormal_moment():
    p = GbmParams(100, 0.1, 0.3, 1.0, 4, 2)
    ST = simulate_gbm(p, 100_000)[:, -1]
    se = ST.std(ddof=1) / math.sqrt(ST.size)
    assert abs(ST.mean() - 100 * math.exp(0.1)) < 3 * se


def test_log_increment_variance():
    p = GbmParams(100, 0.05, 0.25, 1.0, 253, 3)
    inc = np.diff(np.log(simulate_gbm(p, 200)), axis=1).ravel()
    target = 0.25**2 / 253
    se = target * math.sqrt(2 / (inc.size - 1))
    assert abs(inc.var(ddof=1) - target) < 3 * se


def test_paths_depend_only_on_seed_and_index():
    p = GbmParams(100, 0.05, 0.2, 0.5, 253, 42)
    small, large = simulate_gbm(p, 3), simulate_gbm(p, 10)
    assert np.array_equal(small, large[:3])
    assert not np.array_equal(simulate_gbm(GbmParams(100, 0.05, 0.2, 0.5, 253, 43), 3), small)


@pytest.mark.parametrize("kw", [dict(S0=0), dict(T=0), dict(sigma=-0.1)])
def test_gbm_param_validation(kw):
    base = dict(S0=100, mu=0.05, sigma=0.2, T=1.0)
    base.update(kw)
    with pytest.raises(ValueError):
        GbmParams(**base)


@pytest.mark.parametrize("kind,K", [(Kind.CALL, 90.0), (Kind.PUT, 110.0), (Kind.CALL, 130.0)])
def test_deterministic_path_replicates_exactly(kind, K):
    r, T, sig = 0.05, 1.0, 1e-6
    path = simulate_gbm(GbmParams(100, r, 0.0, T, 253, 0))
    spec = OptionSpec(kind, Style.EUROPEAN, K, T)
    price0 = bs_price(kind, 100, K, T, r, 0, sig)
    out = run_hedge(lambda k, t, S: bs_delta(kind, S, K, T - t, r, 0, sig), price0, spec, path, r)
    assert abs(out.V[0]) < 1e-8


def test_unhedged_call_keeps_accrued_premium():
    r, T = 0.03, 0.5
    path = simulate_gbm(GbmParams(100, 0.2, 0.0, T, 253, 0))
    spec = OptionSpec(Kind.CALL, Style.EUROPEAN, 100.0, T)
    out = run_hedge(lambda k, t, S: 0.0, 5.0, spec, path, r)
    expect = 5.0 * math.exp(r * T) - (path[0, -1] - 100.0)
    assert out.V[0] == pytest.approx(expect, rel=1e-12)


def test_nonfinite_delta_aborts():
    path = simulate_gbm(GbmParams(100, 0.05, 0.2, 0.1, 253, 0))
    spec = OptionSpec(Kind.CALL, Style.EUROPEAN, 100.0, 0.1)
    with pytest.raises(HedgeError):
        run_hedge(lambda k, t, S: np.nan, 1.0, spec, path, 0.05)


def test_american_exercise_stops_at_boundary():
    path = np.array([[100.0, 95.0, 85.0, 80.0, 90.0]])
    spec = OptionSpec(Kind.PUT, Style.AMERICAN, 100.0, 4 / 253)
    out = run_hedge(lambda k, t, S: -0.5, 10.0, spec, path, 0.0, exercise_level=lambda t: 88.0)
    assert out.stop_index[0] == 2 and out.exercised[0]
    # cash 10 + 0.5*100; holding -0.5 shares at 85; payoff 15
    assert out.V[0] == pytest.approx(10 + 50 - 0.5 * 85 - 15)


def test_measures_trivial_cases():
    assert hedging_measures(np.zeros(5), 1.0, 0.05) == (0.0, 0.0)
    assert hedging_measures([2.0], [1.0], 0.0) == (2.0, 2.0)
    with pytest.raises(ValueError):
        hedging_measures([], 1.0, 0.0)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(0, 0.2))
def test_eta_dominates_xi_with_common_horizon(values, r):
    xi, eta = hedging_measures(values, 1.0, r)
    assert eta >= xi - 1e-12
    assert xi >= 0


def test_measures_are_order_independent():
    v = np.random.default_rng(0).normal(size=1001) * 10 ** np.random.default_rng(1).uniform(-8, 8, 1001)
    perm = np.random.default_rng(2).permutation(v.size)
    assert hedging_measures(v, 0.5, 0.03) == hedging_measures(v[perm], 0.5, 0.03)


def test_kappa_zero_for_exact_delta():
    d = np.random.default_rng(0).uniform(-1, 0, size=(4, 30))
    S = np.full((4, 31), 100.0)
    assert np.all(kappa_measure(d, d, S, 100.0) == 0.0)


def test_kappa_constant_offset():
    delta = np.full((1, 253), -0.4)
    S = np.full((1, 254), 100.0)
    assert kappa_measure(delta + 0.03, delta, S, 100.0)[0] == pytest.approx(0.03**2, rel=1e-12)


def test_kappa_respects_stop_index():
    delta = np.zeros((1, 10))
    S = np.full((1, 11), 100.0)
    assert kappa_measure(delta + 1, delta, S, 100.0, stop_index=[4], dt=1.0)[0] == pytest.approx(4.0)


@settings(max_examples=30)
@given(st.integers(0, 1000), st.floats(-3, 3))
def test_kappa_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    d1, d2 = rng.uniform(-1, 0, (3, 20)), rng.uniform(-1, 0, (3, 20))
    S = rng.uniform(80, 120, (3, 21))
    assert kappa_measure(d1 + c, d2 + c, S, 100.0) == pytest.approx(kappa_measure(d1, d2, S, 100.0), rel=1e-9, abs=1e-15)


def test_frequency_study_is_monotone_and_reproducible():
    a = bs_frequency_study(n_paths=2000, T=0.25, seed=9)
    xs = [row["xi"] for row in a.breakdown]
    es = [row["eta"] for row in a.breakdown]
    assert all(x > y for x, y in zip(xs, xs[1:]))
    assert all(x > y for x, y in zip(es, es[1:]))
    # quadrupling the rate roughly halves xi
    assert 0.4 < xs[3] / xs[2] < 0.6
    b = bs_frequency_study(n_paths=2000, T=0.25, seed=9)
    assert a.to_dict() == b.to_dict()
    assert a.kappa == 0.0


def test_report_round_trip():
    rep = bs_frequency_study(n_paths=200, T=0.1, seed=1, frequencies=(63, 253))
    doc = rep.to_dict()
    assert doc["schema"] == "hedge-report/1"
    assert HedgeReport.from_dict(doc) == rep
    with pytest.raises(ValueError):
        HedgeReport.from_dict({"schema": "x"})


def test_american_study_with_zero_model():
    knots = Knots((-0.004,), (0.0,), (0.0,))
    model = SplinePricerModel(knots, np.zeros(knots.n_columns), gcv=0.0)
    rep = american_study(model, T=0.1, n_paths=40, n_steps=100, seed=5)
    again = american_study(model, T=0.1, n_paths=40, n_steps=100, seed=5)
    assert rep.to_dict() == again.to_dict()
    assert math.isfinite(rep.kappa) and rep.kappa > 0
    assert rep.breakdown[1]["delta"] == "lattice" and rep.breakdown[1]["kappa"] == 0.0
    assert 0 <= rep.inputs["exercised_fraction"] <= 1
    assert rep.inputs["price0_lattice"] > rep.inputs["price0_model"]  # the premium is missing
