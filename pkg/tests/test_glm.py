import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize
from scipy.special import expit

from matchedpairs.errors import SeparationError
from matchedpairs.glm import INTERCEPT, FitSpec, fit_logistic, odds_ratio, prune_columns, wald_test


def brute_force_mle(X, y):
    """Direct minimisation of the negative log-likelihood with BFGS."""
    D = np.column_stack([np.ones(len(y)), X])

    def nll(b):
        eta = D @ b
        return np.sum(np.logaddexp(0, eta) - y * eta)

    def grad(b):
        return D.T @ (expit(D @ b) - y)

    res = optimize.minimize(nll, np.zeros(D.shape[1]), jac=grad, method="BFGS", options={"gtol": 1e-10})
    return res.x


def test_two_by_two_table():
    # 2x2 table with odds 3/1 exposed and 1/2 unexposed; log odds ratio ln 6
    x = np.array([1, 1, 1, 1, 0, 0, 0])
    y = np.array([1, 1, 1, 0, 1, 0, 0])
    fit = fit_logistic(x, y, names=["x"])
    assert fit.params["x"] == pytest.approx(math.log(6), abs=1e-8)
    assert fit.params[INTERCEPT] == pytest.approx(math.log(0.5), abs=1e-8)
    assert fit.converged


@given(st.integers(0, 2**32 - 1))
def test_matches_direct_optimisation(seed):
    rng = np.random.default_rng(seed)
    n, p = 300, 3
    X = rng.normal(size=(n, p))
    beta = rng.uniform(-1, 1, size=p + 1)
    y = (rng.random(n) < expit(beta[0] + X @ beta[1:])).astype(float)
    fit = fit_logistic(X, y)
    assert np.allclose(fit.coefficients, brute_force_mle(X, y), atol=1e-5)


@given(st.integers(0, 2**32 - 1))
def test_score_vanishes_and_deviance(seed):
    rng = np.random.default_rng(seed)
    X = rng.binomial(1, 0.4, size=(200, 2)).astype(float)
    y = (rng.random(200) < 0.35).astype(float)
    try:
        fit = fit_logistic(X, y)
    except SeparationError:
        return
    D = np.column_stack([np.ones(200), X[:, [fit.columns.index(n) for n in fit.names[1:]]]])
    p = expit(D @ fit.coefficients)
    assert np.max(np.abs(D.T @ (y - p))) < 1e-6
    assert fit.deviance == pytest.approx(-2 * fit.log_likelihood)


def test_separation_is_typed():
    x = np.array([0, 0, 0, 1, 1, 1], dtype=float)
    y = np.array([0, 0, 0, 1, 1, 1], dtype=float)
    with pytest.raises(SeparationError) as err:
        fit_logistic(x, y, names=["x"])
    assert err.value.predictor in ("x", INTERCEPT)


def test_pruning_reasons():
    rng = np.random.default_rng(0)
    a = rng.binomial(1, 0.5, 50).astype(float)
    X = np.column_stack([a, np.ones(50), 1 - a, rng.normal(size=50)])
    keep, reasons = prune_columns(X, ["a", "const", "not_a", "z"], include_intercept=True)
    assert keep == [0, 3]
    assert reasons == {"const": "zero-variance", "not_a": "collinear"}
    keep, reasons = prune_columns(np.column_stack([np.zeros(5), np.ones(5)]), ["zero", "one"], False)
    assert keep == [1] and reasons == {"zero": "zero-variance"}


def test_collinear_column_dropped_with_warning():
    rng = np.random.default_rng(1)
    a = rng.normal(size=100)
    y = (rng.random(100) < expit(a)).astype(float)
    with pytest.warns(UserWarning, match="collinear"):
        fit = fit_logistic(np.column_stack([a, 2 * a]), y, names=["a", "b"])
    assert list(fit.names) == [INTERCEPT, "a"]
    assert list(fit.dropped_columns) == ["b"]


def test_no_intercept_fit():
    rng = np.random.default_rng(2)
    z = rng.choice([-1.0, 0.0, 1.0], size=(80, 1))
    y = np.ones(80)
    z[:10] = -1.0
    fit = fit_logistic(z, y, FitSpec(predictors=("z",), include_intercept=False))
    n10, n01 = np.sum(z == 1), np.sum(z == -1)
    assert fit.params["z"] == pytest.approx(math.log(n10 / n01), abs=1e-7)


def test_wald_contract():
    z, p = wald_test(1.19, 0.09)
    assert p < 0.001 and wald_test(1.19, 0.09).significant()
    assert wald_test(0.0, 1.0).p_value == 1.0
    for se in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            wald_test(1.0, se)


@given(st.floats(-20, 20), st.floats(1e-3, 50))
def test_wald_symmetry(b, se):
    assert wald_test(b, se).p_value == wald_test(-b, se).p_value
    assert 0.0 <= wald_test(b, se).p_value <= 1.0


@given(st.floats(-30, 30))
def test_odds_ratio_is_exp(b):
    assert odds_ratio(b) == math.exp(b)
    assert np.array_equal(odds_ratio(np.array([b, 0.0])), np.exp([b, 0.0]))


@given(st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_slope_invariant_to_shift(seed, shift):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=150)
    y = (rng.random(150) < expit(0.5 * x)).astype(float)
    a = fit_logistic(x, y, names=["x"])
    b = fit_logistic(x + shift, y, names=["x"])
    assert a.params["x"] == pytest.approx(b.params["x"], abs=1e-7)
    assert a.log_likelihood == pytest.approx(b.log_likelihood, abs=1e-7)


def test_predict_and_wald_accessors():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(120, 2))
    y = (rng.random(120) < expit(x[:, 0])).astype(float)
    fit = fit_logistic(x, y, names=["a", "b"])
    p = fit.predict(x)
    assert p.shape == (120,) and np.all((p > 0) & (p < 1))
    z, pval = fit.wald("a")
    assert z == pytest.approx(fit.params["a"] / fit.std_errors[1])
