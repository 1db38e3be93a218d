import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize
from scipy.integrate import trapezoid
from scipy.special import expit, logit
from scipy.stats import norm

from matchedpairs.glm import FitSpec, fit_logistic, logistic_loglik
from matchedpairs.glmm import (
    MixedFitSpec,
    fit_random_intercept_logistic,
    group_marginal_loglik,
    marginal_loglik,
)
from matchedpairs.synth import GeneratorConfig, generate_dataset

GRID = np.linspace(-14.0, 14.0, 280_001)


def trapezoid_group_loglik(eta, y, sigma):
    """log of the integral of the group likelihood against N(0, sigma^2), on a dense grid."""
    u = GRID * sigma
    ll = np.zeros_like(u)
    for e, yi in zip(eta, y):
        t = e + u
        ll += yi * t - np.logaddexp(0.0, t)
    top = ll.max()
    return top + math.log(trapezoid(np.exp(ll - top) * norm.pdf(u, scale=sigma), u))


def test_single_group_trapezoid_oracle():
    y = np.array([1] * 6 + [0] * 4, dtype=float)
    X = np.ones((10, 1))
    for beta0 in (-0.7, 0.0, 0.4, 2.0):
        got = group_marginal_loglik(X, y, [beta0], 1.0)
        want = trapezoid_group_loglik(np.full(10, beta0), y, 1.0)
        assert abs(got - want) < 1e-6


def test_single_observation_symmetry():
    assert group_marginal_loglik(np.zeros((1, 1)), [1.0], [0.0], 1.0) == pytest.approx(math.log(0.5), abs=1e-12)


def test_sigma_zero_is_plain_loglik(rng):
    X = rng.normal(size=(30, 2))
    y = rng.binomial(1, 0.4, 30).astype(float)
    beta = np.array([0.3, -0.8])
    assert group_marginal_loglik(X, y, beta, 0.0) == logistic_loglik(X @ beta, y)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 3.0))
def test_quadrature_self_convergence(seed, sigma):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(15, 200))
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = rng.binomial(1, 0.5, n).astype(float)
    beta = rng.uniform(-1.5, 1.5, size=2)
    a = group_marginal_loglik(X, y, beta, sigma, points=25)
    b = group_marginal_loglik(X, y, beta, sigma, points=51)
    assert abs(a - b) < 1e-8


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 3.0))
def test_tiny_groups_need_more_points(seed, sigma):
    # one to five observations leave a skewed posterior; 25 points is only good to ~1e-5 there
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = rng.binomial(1, 0.5, n).astype(float)
    beta = rng.uniform(-1.5, 1.5, size=2)
    at = {k: group_marginal_loglik(X, y, beta, sigma, points=k) for k in (25, 51, 201)}
    assert abs(at[25] - at[201]) < 5e-5
    assert abs(at[51] - at[201]) < 1e-8


@given(st.integers(0, 2**32 - 1))
def test_trapezoid_oracle_random_groups(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    X = np.column_stack([np.ones(n), rng.binomial(1, 0.5, n)])
    y = rng.binomial(1, 0.3, n).astype(float)
    beta, sigma = rng.uniform(-1, 1, 2), float(rng.uniform(0.2, 2.5))
    assert abs(group_marginal_loglik(X, y, beta, sigma) - trapezoid_group_loglik(X @ beta, y, sigma)) < 1e-6


def test_non_adaptive_agrees_for_small_groups(rng):
    X = np.ones((4, 1))
    y = np.array([1.0, 0.0, 1.0, 1.0])
    a = group_marginal_loglik(X, y, [0.2], 0.7, points=51, adaptive=False)
    assert a == pytest.approx(trapezoid_group_loglik(np.full(4, 0.2), y, 0.7), abs=1e-6)


@given(st.integers(0, 2**32 - 1))
def test_relabel_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 120
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = rng.binomial(1, 0.4, n).astype(float)
    groups = rng.integers(0, 7, n)
    perm = rng.permutation(7)
    relabelled = np.array([f"g{perm[g]}" for g in groups])
    a = marginal_loglik(X, y, groups, [0.1, 0.5], 0.9)
    b = marginal_loglik(X, y, relabelled, [0.1, 0.5], 0.9)
    assert a == pytest.approx(b, abs=1e-10)


def grid_oracle_fit(x, y, groups, start):
    """Maximum likelihood by Nelder-Mead over (b0, b1, log sigma), integrating on a coarse dense grid."""
    grid = np.linspace(-10, 10, 4001)
    labels = np.unique(groups)

    def nll(theta):
        b0, b1, ls = theta
        s = math.exp(ls)
        total = 0.0
        for g in labels:
            m = groups == g
            eta = b0 + b1 * x[m]
            t = eta[:, None] + s * grid[None, :]
            ll = (y[m][:, None] * t - np.logaddexp(0, t)).sum(axis=0)
            top = ll.max()
            total += top + math.log(trapezoid(np.exp(ll - top) * norm.pdf(grid), grid))
        return -total

    res = optimize.minimize(nll, start, method="Nelder-Mead",
                            options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 20000, "maxfev": 40000})
    return res.x, -res.fun


def test_fit_matches_independent_oracle():
    rng = np.random.default_rng(11)
    G, m = 12, 40
    groups = np.repeat(np.arange(G), m)
    x = rng.binomial(1, 0.5, G * m).astype(float)
    u = rng.normal(0, 0.9, G)
    y = (rng.random(G * m) < expit(-0.4 + 0.8 * x + u[groups])).astype(float)
    fit = fit_random_intercept_logistic(x[:, None], y, groups, names=["x"])
    theta, ll = grid_oracle_fit(x, y, groups, [fit.coefficients[0] + 0.05, fit.coefficients[1] - 0.05,
                                               math.log(fit.sigma_u) + 0.1])
    assert fit.log_likelihood == pytest.approx(ll, abs=1e-6)
    assert np.allclose(fit.coefficients, theta[:2], atol=1e-4)
    assert fit.sigma_u == pytest.approx(math.exp(theta[2]), abs=1e-4)
    assert fit.converged and not fit.boundary


@pytest.mark.parametrize("seed", range(6))
def test_optimum_dominates_boundary(seed):
    data = generate_dataset(GeneratorConfig(n_records=800, n_nationalities=15, seed=seed,
                                            true_beta={"intercept": -0.5, "ria": 0.7}, true_sigma_u=0.3 * (seed % 3)))
    X, y, g = data.matrix(["ria"]), data.column("outcome"), data.column("nationality")
    fit = fit_random_intercept_logistic(X, y, g, names=["ria"])
    at_zero = marginal_loglik(np.column_stack([np.ones(len(y)), X]), y, g, fit.coefficients, 0.0)
    assert fit.log_likelihood >= at_zero - 1e-9
    assert fit.sigma_u >= 0
    if fit.boundary:
        plain = fit_logistic(X, y, names=["ria"])
        assert np.allclose(fit.coefficients, plain.coefficients, atol=1e-10)
        assert all(v == 0.0 for v in fit.predicted_effects.values())


def test_quadrature_points_refit_is_stable():
    data = generate_dataset(GeneratorConfig(n_records=1500, n_nationalities=20, seed=5, true_sigma_u=0.8,
                                            true_beta={"intercept": -1.0, "interviewed": 0.8}))
    X, y, g = data.matrix(["interviewed"]), data.column("outcome"), data.column("nationality")
    a = fit_random_intercept_logistic(X, y, g, MixedFitSpec(quadrature_points=25), names=["interviewed"])
    b = fit_random_intercept_logistic(X, y, g, MixedFitSpec(quadrature_points=51), names=["interviewed"])
    assert abs(a.log_likelihood - b.log_likelihood) < 1e-6


def test_shrinkage_intercept_only():
    rng = np.random.default_rng(21)
    G = 30
    sizes = rng.integers(15, 80, G)
    groups = np.repeat(np.arange(G), sizes)
    u = rng.normal(0, 0.8, G)
    y = (rng.random(groups.size) < expit(-0.5 + u[groups])).astype(float)
    fit = fit_random_intercept_logistic(np.empty((y.size, 0)), y, groups, names=[])
    b0 = fit.coefficients[0]
    checked = shrunk = 0
    for j in range(G):
        ybar = y[groups == j].mean()
        if 0 < ybar < 1:
            checked += 1
            shrunk += abs(fit.predicted_effects[str(j)]) <= abs(logit(ybar) - b0) + 1e-12
    assert checked >= 25 and shrunk / checked >= 0.95


def test_sigma_recovery_monte_carlo():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        groups = np.repeat(np.arange(20), 200)
        x = rng.binomial(1, 0.5, groups.size).astype(float)
        u = rng.normal(0, 0.8, 20)
        y = (rng.random(groups.size) < expit(-0.5 + 0.6 * x + u[groups])).astype(float)
        fit = fit_random_intercept_logistic(x[:, None], y, groups, names=["x"])
        hits += abs(fit.sigma_u - 0.8) <= 0.25
    assert hits >= 18


def test_group_count_and_spec_checks():
    X = np.zeros((5, 1))
    y = np.array([0, 1, 0, 1, 1.0])
    with pytest.raises(ValueError, match="two groups"):
        fit_random_intercept_logistic(X, y, np.zeros(5))
    fit = fit_random_intercept_logistic(np.empty((5, 0)), y, np.zeros(5),
                                        MixedFitSpec(allow_single_group=True), names=[])
    assert fit.n_groups == 1
    with pytest.raises(ValueError, match="odd"):
        MixedFitSpec(quadrature_points=50)


def test_unseen_group_predicts_fixed_part():
    data = generate_dataset(GeneratorConfig(n_records=600, n_nationalities=10, seed=2, true_sigma_u=1.0))
    X, y, g = data.matrix(["ria"]), data.column("outcome"), data.column("nationality")
    fit = fit_random_intercept_logistic(X, y, g, MixedFitSpec(fixed=FitSpec()), names=["ria"])
    p_new = fit.predict([[1.0]], ["never-seen"])[0]
    assert p_new == pytest.approx(expit(fit.coefficients[0] + fit.coefficients[1]))
