"""Logistic regression with a single Gaussian random intercept.

The marginal likelihood of each group is integrated with adaptive
Gauss-Hermite quadrature: nodes are centred at the group's posterior mode
and scaled by the curvature there. Parameters are optimised over
``(beta, log sigma)``; the ``sigma = 0`` boundary is the ordinary logistic
fit and is compared against the interior optimum explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import optimize
from scipy.special import expit, logsumexp

from .errors import ConvergenceError, SingularityError
from .glm import INTERCEPT, FitSpec, fit_logistic, invert_information, logistic_loglik, prune_columns

LOG_SIGMA_BOUNDS = (math.log(1e-5), math.log(50.0))
_SQRT2 = math.sqrt(2.0)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MixedFitSpec:
    fixed: FitSpec = field(default_factory=FitSpec)
    grouping: str = "nationality"
    quadrature_points: int = 25
    variance_lower_bound: float = 0.0
    outer_tolerance: float = 1e-7
    outer_max_iterations: int = 200
    adaptive: bool = True
    allow_single_group: bool = False
    compute_covariance: bool = True

    def __post_init__(self):
        if self.quadrature_points < 1 or self.quadrature_points % 2 == 0:
            raise ValueError("quadrature_points must be a positive odd integer")
        if self.variance_lower_bound < 0:
            raise ValueError("variance_lower_bound must be nonnegative")


@dataclass(frozen=True)
class FittedGlmm:
    names: tuple[str, ...]
    coefficients: np.ndarray
    sigma_u: float
    coefficient_covariance: np.ndarray
    log_likelihood: float
    predicted_effects: dict
    converged: bool
    iterations: int = 0
    boundary: bool = False
    n_obs: int = 0
    n_groups: int = 0
    grouping: str = "nationality"
    quadrature_points: int = 25
    columns: tuple[str, ...] = ()
    include_intercept: bool = True
    dropped_columns: tuple[str, ...] = ()
    drop_reasons: dict = field(default_factory=dict)
    gradient_max: float = 0.0
    sigma_u_se: float = float("nan")
    boundary_log_likelihood: float = float("nan")

    @property
    def std_errors(self) -> np.ndarray:
        d = np.diag(self.coefficient_covariance)
        return np.where(d > 0, np.sqrt(np.abs(d)), np.nan)

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, self.coefficients.tolist()))

    def linear_predictor(self, X, groups=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        lookup = {name: i for i, name in enumerate(self.columns)}
        eta = np.zeros(X.shape[0])
        for name, b in zip(self.names, self.coefficients):
            eta += b if name == INTERCEPT else b * X[:, lookup[name]]
        if groups is not None:
            eta += np.array([self.predicted_effects.get(g, 0.0) for g in groups])
        return eta

    def predict(self, X, groups=None) -> np.ndarray:
        """Probabilities; groups not seen in fitting get a zero random intercept."""
        return expit(self.linear_predictor(X, groups))


class _GroupedLogit:
    """Design sorted by group, with the quadrature kernel vectorised over groups."""

    def __init__(self, X, y, groups, points, adaptive=True):
        groups = np.asarray(groups)
        labels, codes = np.unique(groups.astype(str), return_inverse=True)
        # stable sort keeps within-group order; reductions then run in a fixed order
        order = np.argsort(codes, kind="stable")
        self.order = order
        self.X = np.ascontiguousarray(X[order])
        self.y = np.asarray(y, dtype=float)[order]
        self.codes = codes[order]
        self.labels = labels
        self.n_groups = len(labels)
        self.starts = np.flatnonzero(np.r_[True, np.diff(self.codes) != 0])
        self.points = points
        self.adaptive = adaptive
        self.nodes, w = hermgauss(points)
        self.log_w = np.log(w)
        self._u_cache = np.zeros(self.n_groups)

    def gsum(self, v):
        return np.add.reduceat(v, self.starts, axis=0)

    def modes(self, eta, sigma, u0=None):
        """Posterior modes of the random intercepts and the curvature there."""
        inv_var = 1.0 / sigma**2
        u = np.zeros(self.n_groups) if u0 is None else u0.copy()
        y = self.y

        def objective(u):
            e = eta + u[self.codes]
            return self.gsum(y * e - np.logaddexp(0.0, e)) - 0.5 * inv_var * u**2

        f = objective(u)
        for _ in range(200):
            p = expit(eta + u[self.codes])
            grad = self.gsum(y - p) - inv_var * u
            info = self.gsum(p * (1.0 - p)) + inv_var
            step = np.clip(grad / info, -2.0, 2.0)
            if np.max(np.abs(step)) < 1e-11:
                break
            t = np.ones(self.n_groups)
            for _ in range(30):
                cand = u + t * step
                f_new = objective(cand)
                worse = f_new < f - 1e-13 * np.abs(f)
                if not np.any(worse):
                    break
                t = np.where(worse, 0.5 * t, t)
            u, f = cand, f_new
        p = expit(eta + u[self.codes])
        info = self.gsum(p * (1.0 - p)) + inv_var
        return u, info

    def evaluate(self, beta, sigma, want_grad=False):
        """Marginal log-likelihood per group, optionally with the gradient.

        The gradient is returned with respect to ``(beta, log sigma)``.
        """
        eta = self.X @ beta
        if sigma <= 0.0:
            per_group = self.gsum(self.y * eta - np.logaddexp(0.0, eta))
            if not want_grad:
                return per_group, None
            grad = np.append(self.X.T @ (self.y - expit(eta)), 0.0)
            return per_group, grad
        if self.adaptive:
            u_hat, info = self.modes(eta, sigma, self._u_cache)
            self._u_cache = u_hat
            scale = 1.0 / np.sqrt(info)
        else:
            u_hat = np.zeros(self.n_groups)
            scale = np.full(self.n_groups, sigma)
        U = u_hat[:, None] + _SQRT2 * scale[:, None] * self.nodes[None, :]
        E = eta[:, None] + U[self.codes]
        S = self.gsum(self.y[:, None] * E - np.logaddexp(0.0, E))
        A = self.log_w[None, :] + self.nodes[None, :] ** 2 + S - 0.5 * U**2 / sigma**2
        lse = logsumexp(A, axis=1)
        per_group = lse + np.log(_SQRT2 * scale) - 0.5 * _LOG_2PI - math.log(sigma)
        if not want_grad:
            return per_group, None
        post = np.exp(A - lse[:, None])
        resid = self.y[:, None] - expit(E)
        r = np.einsum("ik,ik->i", post[self.codes], resid)
        g_beta = self.X.T @ r
        g_log_sigma = float(np.sum(post * U**2) / sigma**2 - self.n_groups)
        return per_group, np.append(g_beta, g_log_sigma)

    def loglik(self, beta, sigma):
        return float(np.sum(self.evaluate(beta, sigma)[0]))


def group_marginal_loglik(X, y, beta, sigma_u: float, points: int = 25, adaptive: bool = True) -> float:
    """Marginal log-likelihood of one group under a ``N(0, sigma_u^2)`` intercept.

    ``X`` must contain every column ``beta`` multiplies (an intercept column
    included, if any). With ``sigma_u == 0`` this is the ordinary logistic
    log-likelihood. Any positive point count is accepted here.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if points < 1:
        raise ValueError("points must be at least 1")
    if sigma_u < 0:
        raise ValueError("sigma_u must be nonnegative")
    if sigma_u == 0:
        return logistic_loglik(X @ np.asarray(beta, dtype=float), y)
    model = _GroupedLogit(X, y, np.zeros(len(y), dtype=int), points, adaptive)
    return model.loglik(np.asarray(beta, dtype=float), sigma_u)


def marginal_loglik(X, y, groups, beta, sigma_u: float, points: int = 25, adaptive: bool = True) -> float:
    """Total marginal log-likelihood summed over groups in sorted-label order."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    model = _GroupedLogit(X, np.asarray(y, dtype=float), groups, points, adaptive)
    return model.loglik(np.asarray(beta, dtype=float), sigma_u)


def _standardise(X, include_intercept):
    """Centre/scale columns; returns the transformed design and the map back.

    With ``T`` returned, original coefficients are ``T @ beta_std``.
    """
    p = X.shape[1]
    T = np.eye(p)
    Z = X.copy()
    start = 1 if include_intercept else 0
    for j in range(start, p):
        col = X[:, j]
        if include_intercept:
            m = col.mean()
            s = col.std()
        else:
            m = 0.0
            s = math.sqrt(np.mean(col**2))
        s = s if s > 0 else 1.0
        Z[:, j] = (col - m) / s
        T[j, j] = 1.0 / s
        if include_intercept:
            T[0, j] = -m / s
    return Z, T


def _fd_hessian(grad_fn, theta, h=1e-4):
    k = theta.size
    H = np.empty((k, k))
    for j in range(k):
        step = h * max(1.0, abs(theta[j]))
        e = np.zeros(k)
        e[j] = step
        H[:, j] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2 * step)
    return 0.5 * (H + H.T)


def fit_random_intercept_logistic(X, y, groups, spec: MixedFitSpec | None = None,
                                  names: Sequence[str] | None = None) -> FittedGlmm:
    """Fit ``logit P(y=1) = X beta + u_group`` with ``u ~ N(0, sigma_u^2)``.

    Parameters
    ----------
    X : array-like (n, p) or DataFrame
        Fixed-effect design without an intercept column.
    y : array-like (n,)
        0/1 response.
    groups : array-like (n,)
        Grouping labels for the random intercept.
    spec : MixedFitSpec, optional
    names : sequence of str, optional

    Returns
    -------
    FittedGlmm
        ``boundary`` is true when ``sigma_u = 0`` beat every interior candidate.
    """
    spec = spec or MixedFitSpec()
    if names is None and hasattr(X, "columns"):
        names = [str(c) for c in X.columns]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups)
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    names = [str(n) for n in names]
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("response must be coded 0/1")
    n_groups = len(np.unique(groups.astype(str)))
    if n_groups < 2 and not spec.allow_single_group:
        raise ValueError("need at least two groups (set allow_single_group to override)")

    fixed = spec.fixed
    keep, reasons = prune_columns(X, names, fixed.include_intercept)
    kept = [names[j] for j in keep]
    D = X[:, keep]
    if fixed.include_intercept:
        D = np.column_stack([np.ones(len(y)), D])
        kept = [INTERCEPT] + kept
    if D.shape[1] == 0:
        raise SingularityError("no estimable fixed-effect columns")
    Z, T = _standardise(D, fixed.include_intercept)

    # boundary candidate; separation in the fixed part surfaces here
    glm = fit_logistic(D, y, FitSpec(predictors=kept, include_intercept=False, max_iterations=fixed.max_iterations,
                                     score_tolerance=fixed.score_tolerance,
                                     separation_guard=fixed.separation_guard), names=kept)
    T_inv = np.linalg.inv(T)
    glm_beta_std = T_inv @ glm.coefficients
    glm_cov_std = T_inv @ glm.covariance @ T_inv.T
    model = _GroupedLogit(Z, y, groups, spec.quadrature_points, spec.adaptive)
    p = Z.shape[1]
    ll_boundary = model.loglik(glm_beta_std, 0.0)

    def neg(theta):
        per_group, grad = model.evaluate(theta[:p], math.exp(theta[p]), want_grad=True)
        return -float(np.sum(per_group)), -grad

    def grad_only(theta):
        return neg(theta)[1]

    lower = max(LOG_SIGMA_BOUNDS[0], math.log(spec.variance_lower_bound) / 2 if spec.variance_lower_bound > 0 else -np.inf)
    starts = [math.log(s) for s in (0.25, 0.5, 1.0, 2.0)]
    best_start = max(starts, key=lambda ls: model.loglik(glm_beta_std, math.exp(ls)))
    theta0 = np.append(glm_beta_std, best_start)
    bounds = [(None, None)] * p + [(lower, LOG_SIGMA_BOUNDS[1])]
    res = optimize.minimize(neg, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": spec.outer_max_iterations, "ftol": 1e-15, "gtol": 1e-9})
    theta = res.x
    iterations = int(res.nit)
    n_obs = len(y)
    grad_tol = max(1e-5, spec.outer_tolerance * n_obs)

    # Newton polishing with a finite-difference Hessian of the analytic gradient
    at_lower = theta[p] <= lower + 1e-6
    H = None
    if not at_lower:
        f, g = neg(theta)
        for _ in range(20):
            H = _fd_hessian(grad_only, theta)
            try:
                step = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            t = 1.0
            improved = False
            for _ in range(30):
                cand = theta + t * step
                cand[p] = min(max(cand[p], lower), LOG_SIGMA_BOUNDS[1])
                f_new, g_new = neg(cand)
                if f_new <= f + 1e-12 * abs(f):
                    improved = True
                    break
                t *= 0.5
            if not improved:
                break
            converged_step = np.max(np.abs(theta - cand)) < 1e-10
            theta, f, g = cand, f_new, g_new
            iterations += 1
            if np.max(np.abs(g)) < 1e-3 * grad_tol or converged_step:
                break
        at_lower = theta[p] <= lower + 1e-6
    ll_interior = -neg(theta)[0]

    if at_lower or ll_boundary >= ll_interior:
        beta_std = glm_beta_std
        sigma = 0.0
        ll = ll_boundary
        boundary = True
        g = model.evaluate(beta_std, 0.0, want_grad=True)[1][:p]
        cov_std = glm_cov_std
        sigma_se = float("nan")
        effects = {label: 0.0 for label in model.labels}
    else:
        beta_std = theta[:p]
        sigma = math.exp(theta[p])
        ll = ll_interior
        boundary = False
        g = neg(theta)[1]
        cov_std = np.full((p, p), np.nan)
        sigma_se = float("nan")
        if spec.compute_covariance:
            H = _fd_hessian(grad_only, theta)
            try:
                full = invert_information(H)
                cov_std = full[:p, :p]
                if full[p, p] > 0:
                    sigma_se = sigma * math.sqrt(full[p, p])
            except SingularityError:
                pass
        u_hat, _ = model.modes(model.X @ beta_std, sigma, model._u_cache)
        effects = {label: float(u) for label, u in zip(model.labels, u_hat)}

    beta = T @ beta_std
    cov = T @ cov_std @ T.T
    gmax = float(np.max(np.abs(g)))
    converged = gmax < grad_tol
    if not converged and not np.isfinite(ll):
        raise ConvergenceError("mixed model optimisation failed", last_iterate=beta, trace=[res.message])
    return FittedGlmm(
        names=tuple(kept),
        coefficients=beta,
        sigma_u=sigma,
        coefficient_covariance=cov,
        log_likelihood=float(ll),
        predicted_effects=effects,
        converged=bool(converged),
        iterations=iterations,
        boundary=boundary,
        n_obs=n_obs,
        n_groups=model.n_groups,
        grouping=spec.grouping,
        quadrature_points=spec.quadrature_points,
        columns=tuple(names),
        include_intercept=fixed.include_intercept,
        dropped_columns=tuple(n for n in names if n in reasons),
        drop_reasons=reasons,
        gradient_max=gmax,
        sigma_u_se=sigma_se,
        boundary_log_likelihood=float(ll_boundary),
    )

