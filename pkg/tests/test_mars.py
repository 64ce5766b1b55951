import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semibasis.mars import INTERCEPT, Hinge, MarsBasisFn, MarsModel, gcv_score, mars_fit, mars_predict
from semibasis.regress import ols


def reference_correction():
    """Two-way hinge correction with the reference coefficients of the lynx fit."""
    basis = [
        MarsBasisFn((Hinge(0, 3.224, +1), Hinge(1, 2.864, +1))),
        MarsBasisFn((Hinge(0, 3.202, +1),)),
        MarsBasisFn((Hinge(1, 3.202, +1),)),
    ]
    return MarsModel(basis, np.array([2.294, -1.572, -0.851]), gcv=float("nan"), penalty_d=3.0)


def test_reference_correction_hand_value():
    assert mars_predict(reference_correction(), [3.5, 3.0]) == pytest.approx(-0.38235, abs=1e-5)


def test_hinge_below_knot_is_zero():
    h = MarsBasisFn((Hinge(0, 2.0, +1),))
    assert h.evaluate(np.array([[1.5]]))[0] == 0.0
    assert MarsBasisFn((Hinge(0, 2.0, -1),)).evaluate(np.array([[1.5]]))[0] == 0.5


def test_repeated_variable_rejected():
    with pytest.raises(ValueError):
        MarsBasisFn((Hinge(0, 1.0, +1), Hinge(0, 2.0, -1)))


def test_intercept_only_model_predicts_constant():
    m = MarsModel([INTERCEPT], np.array([4.2]), gcv=0.0, penalty_d=3.0)
    assert m.predict(np.random.default_rng(0).normal(size=(5, 3))) == pytest.approx(4.2)


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        mars_predict(reference_correction(), [3.5])


def test_constant_response_gives_intercept_only():
    X = np.random.default_rng(1).uniform(size=(80, 2))
    m = mars_fit(X, np.full(80, 1.7))
    assert m.basis == [INTERCEPT]
    assert m.coefficients == pytest.approx([1.7])


def test_noiseless_hinge_recovery():
    x = np.arange(200) / 200
    y = 3 + 2 * np.maximum(x - 0.5, 0)
    m = mars_fit(x[:, None], y)
    assert np.max(np.abs(m.predict(x[:, None]) - y)) < 1e-8


def test_linear_data_matches_ols():
    x = np.linspace(0, 1, 150)
    y = 1 + 2 * x
    m = mars_fit(x[:, None], y)
    line = ols(np.column_stack([np.ones_like(x), x]), y).predict(np.column_stack([np.ones_like(x), x]))
    assert np.sqrt(np.mean((m.predict(x[:, None]) - line) ** 2)) < 1e-6


def test_interaction_is_found():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, size=(300, 2))
    y = 4 * np.maximum(X[:, 0] - 0.4, 0) * np.maximum(X[:, 1] - 0.3, 0) + 0.001 * rng.normal(size=300)
    m = mars_fit(X, y)
    assert m.max_degree == 2


def test_additive_limit_has_no_products():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, size=(300, 2))
    y = 4 * np.maximum(X[:, 0] - 0.4, 0) * np.maximum(X[:, 1] - 0.3, 0)
    assert mars_fit(X, y, max_interaction=1).max_degree <= 1


@pytest.mark.parametrize("kw", [dict(max_terms=0), dict(max_terms=60)])
def test_fit_argument_validation(kw):
    X = np.random.default_rng(4).uniform(size=(100, 2))
    with pytest.raises(ValueError):
        mars_fit(X, X[:, 0], **kw)


def test_gcv_formula():
    # C = 3 + 2*(3-1) = 7
    assert gcv_score(2.0, 50, 3, 2.0) == pytest.approx(2.0 / (50 * (1 - 7 / 50) ** 2))
    assert gcv_score(1.0, 10, 5, 3.0) == float("inf")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_invariants(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 4, size=(90, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 0] * (X[:, 1] > 2) + 0.1 * rng.normal(size=90)
    m = mars_fit(X, y)
    # forward RSS strictly decreasing
    assert all(b < a for a, b in zip(m.forward_rss, m.forward_rss[1:]))
    # pruning never worsens GCV relative to the full forward model
    assert m.gcv <= m.forward_gcv + 1e-12
    # knots are observed values of their variable
    for b in m.basis:
        for h in b.factors:
            assert np.any(X[:, h.var] == h.knot)
    # stored coefficients are the OLS fit of the stored basis
    refit = ols(m.design(X), y)
    assert refit.coefficients == pytest.approx(m.coefficients, abs=1e-10)
    assert m.gcv == pytest.approx(gcv_score(refit.residual_sum_squares, 90, len(m.basis), m.penalty_d), rel=1e-10)


def test_serialisation_round_trip():
    m = reference_correction()
    back = MarsModel.loads(m.dumps())
    X = np.random.default_rng(5).uniform(2, 4, size=(20, 2))
    assert back.predict(X) == pytest.approx(m.predict(X), abs=0)
    assert m.to_dict()["schema"] == "mars/1"


def test_wrong_schema_rejected():
    with pytest.raises(ValueError):
        MarsModel.from_dict({"schema": "other/1", "terms": []})


def test_string_form():
    assert str(reference_correction()).startswith("+2.2940*(x0 - 3.224)+*(x1 - 2.864)+")
