"""Binary logistic regression by Newton/IRLS with step halving.

The same damped Newton driver (:func:`newton_maximize`) is reused by the
matched-set conditional likelihood in :mod:`matchedpairs.paired`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit
from scipy.stats import norm

from .errors import ConvergenceError, SeparationError, SingularityError

INTERCEPT = "intercept"


@dataclass(frozen=True)
class FitSpec:
    response: str = "outcome"
    predictors: tuple[str, ...] = ()
    include_intercept: bool = True
    max_iterations: int = 50
    score_tolerance: float = 1e-8
    ridge_fallback: float = 1e-10
    separation_guard: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if self.score_tolerance <= 0:
            raise ValueError("score_tolerance must be positive")
        if not self.predictors and not self.include_intercept:
            raise ValueError("a model needs predictors or an intercept")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class FittedGlm:
    names: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    deviance: float
    log_likelihood: float
    iterations_used: int
    converged: bool
    dropped_columns: tuple[str, ...] = ()
    drop_reasons: dict = field(default_factory=dict)
    columns: tuple[str, ...] = ()
    include_intercept: bool = True
    n_obs: int = 0
    score_max: float = 0.0

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, self.coefficients.tolist()))

    def linear_predictor(self, X) -> np.ndarray:
        """Linear predictor for a design laid out like the fitted ``columns``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        lookup = {name: i for i, name in enumerate(self.columns)}
        eta = np.zeros(X.shape[0])
        for name, b in zip(self.names, self.coefficients):
            eta += b if name == INTERCEPT else b * X[:, lookup[name]]
        return eta

    def predict(self, X) -> np.ndarray:
        return expit(self.linear_predictor(X))

    def wald(self, name: str) -> "WaldTest":
        i = self.names.index(name)
        return wald_test(self.coefficients[i], self.std_errors[i])


class WaldTest(NamedTuple):
    z: float
    p_value: float

    def significant(self, alpha: float = 0.001) -> bool:
        return self.p_value < alpha


def wald_test(estimate: float, std_error: float) -> WaldTest:
    """Two-sided Wald test of a zero coefficient."""
    if not (std_error > 0) or not math.isfinite(std_error):
        raise ValueError(f"std_error must be positive and finite, got {std_error!r}")
    z = float(estimate) / float(std_error)
    return WaldTest(z, float(2.0 * norm.sf(abs(z))))


def odds_ratio(beta):
    """``exp(beta)``, the multiplicative change in odds per unit of the factor."""
    if np.ndim(beta) == 0:
        if not math.isfinite(beta):
            raise ValueError("beta must be finite")
        return math.exp(beta)
    return np.exp(np.asarray(beta, dtype=float))


def logistic_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def prune_columns(X: np.ndarray, names: Sequence[str], include_intercept: bool, tol: float = 1e-9):
    """Drop zero-variance and linearly dependent columns, earliest kept first.

    Returns ``(keep_index, reasons)`` where ``reasons`` maps dropped names to
    ``"zero-variance"`` or ``"collinear"``.
    """
    n = X.shape[0]
    reasons = {}
    basis = []
    if include_intercept and n:
        basis.append(np.full(n, 1.0 / math.sqrt(n)))
    keep = []
    for j, name in enumerate(names):
        col = X[:, j]
        degenerate = np.ptp(col) == 0 if include_intercept else not np.any(col)
        if n == 0 or degenerate:
            reasons[name] = "zero-variance"
            continue
        r = col.astype(float).copy()
        for _ in range(2):
            for q in basis:
                r -= q * (q @ r)
        scale = np.linalg.norm(col)
        if np.linalg.norm(r) <= tol * scale:
            reasons[name] = "collinear"
            continue
        basis.append(r / np.linalg.norm(r))
        keep.append(j)
    return keep, reasons


def _solve(H: np.ndarray, g: np.ndarray, ridge: float) -> np.ndarray:
    try:
        c = linalg.cho_factor(H, check_finite=False)
        step = linalg.cho_solve(c, g, check_finite=False)
        if np.all(np.isfinite(step)):
            return step
    except linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(np.diag(H))))) if H.size else 1.0
    try:
        step = linalg.solve(H + ridge * scale * np.eye(H.shape[0]), g, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise SingularityError(f"singular normal equations: {exc}") from None
    if not np.all(np.isfinite(step)):
        raise SingularityError("singular normal equations")
    return step


def invert_information(H: np.ndarray, ridge: float = 1e-10) -> np.ndarray:
    """Inverse of an observed information matrix, symmetrised."""
    if H.size == 0:
        return np.zeros((0, 0))
    try:
        c = linalg.cho_factor(H, check_finite=False)
        cov = linalg.cho_solve(c, np.eye(H.shape[0]), check_finite=False)
    except linalg.LinAlgError:
        scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
        try:
            cov = linalg.inv(H + ridge * scale * np.eye(H.shape[0]))
        except linalg.LinAlgError as exc:
            raise SingularityError(f"information matrix is singular: {exc}") from None
    return 0.5 * (cov + cov.T)


@dataclass
class NewtonResult:
    beta: np.ndarray
    loglik: float
    grad: np.ndarray
    hess: np.ndarray
    iterations: int
    converged: bool


def newton_maximize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    beta0: np.ndarray,
    names: Sequence[str],
    *,
    max_iterations: int = 50,
    score_tolerance: float = 1e-8,
    step_tolerance: float = 1e-6,
    ridge: float = 1e-10,
    guard: float = 30.0,
) -> NewtonResult:
    """Maximise a concave log-likelihood by Newton's method with step halving.

    ``objective(beta)`` returns ``(loglik, gradient, hessian)``. Convergence
    needs both a small score and a small Newton step: under separation the
    score decays while the step stays near one, which is how diverging
    coefficients are caught by ``guard`` instead of being reported as a fit.
    """
    beta = np.asarray(beta0, dtype=float).copy()
    ll, g, H = objective(beta)
    trace = [ll]
    for it in range(1, max_iterations + 1):
        step = _solve(-H, g, ridge)
        if np.max(np.abs(g), initial=0.0) < score_tolerance and np.max(np.abs(step), initial=0.0) < step_tolerance:
            return NewtonResult(beta, ll, g, H, it - 1, True)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new, g_new, H_new = objective(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            # no ascent possible along the Newton direction: at machine precision
            return NewtonResult(beta, ll, g, H, it, bool(np.max(np.abs(g), initial=0.0) < score_tolerance))
        beta, ll, g, H = cand, ll_new, g_new, H_new
        trace.append(ll)
        big = np.abs(beta) > guard
        if np.any(big):
            j = int(np.argmax(np.abs(beta)))
            raise SeparationError(
                f"coefficient for {names[j]!r} diverged past |beta|>{guard:g} (separation)",
                predictor=names[j],
                beta=beta.copy(),
            )
    raise ConvergenceError(
        f"no convergence in {max_iterations} iterations (max score {np.max(np.abs(g)):.3g})",
        last_iterate=beta,
        trace=trace,
    )


def fit_logistic(X, y, spec: FitSpec | None = None, names: Sequence[str] | None = None,
                 start: np.ndarray | None = None) -> FittedGlm:
    """Maximum-likelihood logistic regression.

    Parameters
    ----------
    X : array-like (n, p) or DataFrame
        Design matrix without an intercept column.
    y : array-like (n,)
        Binary 0/1 response.
    spec : FitSpec, optional
        Intercept flag, tolerances and the separation guard. ``spec.predictors``
        supplies column names when ``names`` is not given.
    names : sequence of str, optional
        Column names; defaults to DataFrame columns, then ``x0, x1, ...``.

    Raises
    ------
    SeparationError
        A coefficient passed the separation guard.
    SingularityError, ConvergenceError
    """
    spec = spec or FitSpec()
    if names is None and hasattr(X, "columns"):
        names = [str(c) for c in X.columns]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if names is None:
        names = list(spec.predictors) if len(spec.predictors) == X.shape[1] else [f"x{j}" for j in range(X.shape[1])]
    names = [str(n) for n in names]
    if len(names) != X.shape[1]:
        raise ValueError("names do not match the number of design columns")
    if X.shape[0] != y.shape[0]:
        raise ValueError("design and response lengths differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("response must be coded 0/1")

    keep, reasons = prune_columns(X, names, spec.include_intercept)
    collinear = [n for n, r in reasons.items() if r == "collinear"]
    if collinear:
        warnings.warn(f"dropped collinear columns: {collinear}", stacklevel=2)
    Z = X[:, keep]
    kept_names = [names[j] for j in keep]
    if spec.include_intercept:
        Z = np.column_stack([np.ones(X.shape[0]), Z])
        kept_names = [INTERCEPT] + kept_names
    if Z.shape[1] == 0:
        raise SingularityError("no estimable columns remain after pruning")

    def objective(beta):
        eta = Z @ beta
        p = expit(eta)
        w = p * (1.0 - p)
        return logistic_loglik(eta, y), Z.T @ (y - p), -(Z.T @ (w[:, None] * Z))

    beta0 = np.zeros(Z.shape[1]) if start is None else np.asarray(start, dtype=float)
    res = newton_maximize(
        objective,
        beta0,
        kept_names,
        max_iterations=spec.max_iterations,
        score_tolerance=spec.score_tolerance,
        ridge=spec.ridge_fallback,
        guard=spec.separation_guard,
    )
    cov = invert_information(-res.hess, spec.ridge_fallback)
    return FittedGlm(
        names=tuple(kept_names),
        coefficients=res.beta,
        covariance=cov,
        deviance=-2.0 * res.loglik,
        log_likelihood=res.loglik,
        iterations_used=res.iterations,
        converged=res.converged,
        dropped_columns=tuple(n for n in names if n in reasons),
        drop_reasons=reasons,
        columns=tuple(names),
        include_intercept=spec.include_intercept,
        n_obs=int(X.shape[0]),
        score_max=float(np.max(np.abs(res.grad), initial=0.0)),
    )
