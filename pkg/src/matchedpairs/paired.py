"""Models for matched pairs: conditional likelihood and the stacked mixed model.

The conditional fit uses the difference transform: a logistic regression
of a constant response of 1 on case-minus-control differences, without an
intercept. For 1:M sets the exact matched-set conditional likelihood is
also available.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .data import MATCHING_VARIABLES, TABLE1_LABELS, Dataset
from .errors import ConvergenceError, IntegrityError, SeparationError
from .glm import (
    INTERCEPT,
    FitSpec,
    fit_logistic,
    invert_information,
    newton_maximize,
    odds_ratio,
    prune_columns,
    wald_test,
)
from .glmm import MixedFitSpec, fit_random_intercept_logistic
from .matching import MatchedSet, PairRow, pair_matrix

SIGNIFICANCE = 0.001
GROUPING_NOTE = (
    "random intercept grouping is configurable (nationality | pair | person-by-nationality); "
    "the published model description admits more than one reading"
)


def interaction_name(factor: str, era: str = "after2004") -> str:
    return f"{factor}_x_{era}"


@dataclass(frozen=True)
class InteractionDesign:
    original_factors: tuple[str, ...]
    era_indicator: str
    interaction_factors: tuple[str, ...]
    total_covariates: int

    @property
    def names(self) -> list[str]:
        return list(self.original_factors) + list(self.interaction_factors)

    def interacted(self) -> list[str]:
        """Originals that carry an interaction, in interaction order."""
        suffix = f"_x_{self.era_indicator}"
        return [name[: -len(suffix)] for name in self.interaction_factors]


def make_design(originals: Sequence[str], era: str = "after2004",
                interactions: Sequence[str] | None = None) -> InteractionDesign:
    originals = tuple(originals)
    bad = [v for v in originals if v in MATCHING_VARIABLES]
    if bad:
        raise ValueError(f"matching variables are excluded by design: {bad}")
    interacted = originals if interactions is None else tuple(interactions)
    stray = [v for v in interacted if v not in originals]
    if stray:
        raise ValueError(f"interactions need an original factor: {stray}")
    inter = tuple(interaction_name(v, era) for v in interacted)
    return InteractionDesign(originals, era, inter, len(originals) + len(inter))


def build_interaction_design(pair_rows: Sequence[PairRow], originals: Sequence[str], era: str = "after2004",
                             interactions: Sequence[str] | None = None):
    """Append era-interaction differences to every pair row.

    The era indicator is shared within a pair, so the interaction difference
    is ``era * (case_x - control_x)``.

    Returns
    -------
    rows : list of PairRow
        New rows whose ``z`` holds originals followed by interactions.
    design : InteractionDesign
    """
    design = make_design(originals, era, interactions)
    out = []
    for r in pair_rows:
        e_case, e_control = r.case_context.get(era), r.control_context.get(era)
        if e_case is None or e_control is None:
            raise IntegrityError(f"pair {r.pair_id} carries no {era!r} value")
        if e_case != e_control:
            raise IntegrityError(f"era indicator differs within pair {r.pair_id}")
        z = {v: r.z[v] for v in design.original_factors}
        for v, name in zip(design.interacted(), design.interaction_factors):
            z[name] = float(e_case) * r.z[v]
        out.append(
            PairRow(r.pair_id, r.case_id, r.control_id, z, r.nationality, r.case_context, r.control_context, r.response)
        )
    return out, design


@dataclass
class CoefficientRow:
    name: str
    estimate: float | None = None
    std_error: float | None = None
    wald_z: float | None = None
    wald_p: float | None = None
    significant: bool | None = None
    odds_ratio: float | None = None
    estimable: bool = True
    reason: str | None = None


def _row(name, estimate, se, alpha):
    if se is None or not math.isfinite(se) or se <= 0:
        return CoefficientRow(name, estimable=False, reason="non-convergence")
    z, p = wald_test(estimate, se)
    return CoefficientRow(
        name=name,
        estimate=float(estimate),
        std_error=float(se),
        wald_z=z,
        wald_p=p,
        significant=bool(p < alpha),
        odds_ratio=odds_ratio(float(estimate)),
    )


@dataclass
class FitReport:
    model: str
    rows: list[CoefficientRow]
    diagnostics: dict = field(default_factory=dict)

    def row(self, name: str) -> CoefficientRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def estimable(self) -> list[CoefficientRow]:
        return [r for r in self.rows if r.estimable]

    def to_dict(self) -> dict:
        return {"model": self.model, "rows": [asdict(r) for r in self.rows], "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(d["model"], [CoefficientRow(**r) for r in d["rows"]], d.get("diagnostics", {}))

    def to_json(self, **extra) -> str:
        return json.dumps(dict(self.to_dict(), **extra), indent=2, sort_keys=True, allow_nan=False,
                          default=_json_default) + "\n"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows]).set_index("name")

    def to_markdown(self, labels: Mapping[str, str] | None = None) -> str:
        header = ["Variable", "Estimate", "Std. Error", "Wald p", "Odds Ratio"]
        body = [[_label(r.name, labels)] + _cells(r) for r in self.rows]
        return markdown_table(header, body)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serialisable: {type(obj)}")


def _label(name, labels):
    labels = TABLE1_LABELS if labels is None else labels
    for suffix in ("_x_after2004",):
        if name.endswith(suffix):
            base = name[: -len(suffix)]
            return f"{labels.get(base, base)} x After 2004"
    return labels.get(name, name)


def _cells(r: CoefficientRow) -> list[str]:
    if not r.estimable:
        return ["-", "-", "-", "-"]
    p = "<0.001" if r.wald_p < 0.001 else f"{r.wald_p:.3f}"
    p += " *" if r.significant else ""
    return [f"{r.estimate:.2f}", f"{r.std_error:.2f}", p, f"{r.odds_ratio:.2f}"]


def markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def side_by_side_markdown(conditional: FitReport, mixed: FitReport, labels=None) -> str:
    """Both models in one table, estimate/SE/Wald/OR for each."""
    header = ["Variable", "M1 Estimate", "M1 SE", "M1 Wald p", "M1 OR",
              "M2 Estimate", "M2 SE", "M2 Wald p", "M2 OR"]
    names = [r.name for r in conditional.rows] + [r.name for r in mixed.rows if r.name not in
                                                  {x.name for x in conditional.rows}]
    rows = []
    for name in names:
        if name == INTERCEPT:
            continue
        cells = [_label(name, labels)]
        for report in (conditional, mixed):
            try:
                cells += _cells(report.row(name))
            except KeyError:
                cells += ["", "", "", ""]
        rows.append(cells)
    note = "`*` marks significance at the 0.1% level; `-` marks a non-estimable term.\n"
    return markdown_table(header, rows) + "\n" + note


def _conditional_objective(Z, set_starts):
    """Log conditional likelihood of 1:M sets given case-minus-control rows."""

    def objective(beta):
        a = -(Z @ beta)
        top = np.maximum(np.maximum.reduceat(a, set_starts), 0.0)
        shift = np.repeat(top, np.diff(np.r_[set_starts, a.size]))
        terms = np.exp(a - shift)
        denom = np.exp(-top) + np.add.reduceat(terms, set_starts)
        log_d = top + np.log(denom)
        q = terms / np.repeat(denom, np.diff(np.r_[set_starts, a.size]))
        v = np.add.reduceat(q[:, None] * Z, set_starts, axis=0)
        grad = v.sum(axis=0)
        hess = -(Z.T @ (q[:, None] * Z)) + v.T @ v
        return -float(log_d.sum()), grad, hess

    return objective


def _fit_conditional_sets(Z, case_ids, names, spec: FitSpec):
    order = np.argsort(case_ids, kind="stable")
    Zs = Z[order]
    cs = np.asarray(case_ids)[order]
    starts = np.flatnonzero(np.r_[True, cs[1:] != cs[:-1]])
    res = newton_maximize(
        _conditional_objective(Zs, starts),
        np.zeros(Z.shape[1]),
        names,
        max_iterations=spec.max_iterations,
        score_tolerance=spec.score_tolerance,
        ridge=spec.ridge_fallback,
        guard=spec.separation_guard,
    )
    cov = invert_information(-res.hess, spec.ridge_fallback)
    return res.beta, cov, res.loglik, res.converged, res.iterations


def fit_conditional_pairs(rows: Sequence[PairRow], names: Sequence[str] | None = None, mode: str = "flatten",
                          spec: FitSpec | None = None, alpha: float = SIGNIFICANCE) -> FitReport:
    """Conditional maximum likelihood estimates for matched pairs.

    Parameters
    ----------
    rows : sequence of PairRow
        Output of :func:`~matchedpairs.matching.build_pair_rows`, optionally
        augmented by :func:`build_interaction_design`.
    names : sequence of str, optional
        Difference columns to model; defaults to the keys of the first row.
    mode : {"flatten", "conditional"}
        ``flatten`` treats every (case, control) row as its own pair.
        ``conditional`` groups rows by case into 1:M sets and maximises the
        exact conditional likelihood of each set.

    Non-estimable terms are reported, never dropped: all-zero columns as
    ``zero-variance``, linearly dependent ones as ``dependence`` and terms
    that drive a separation as ``separation`` (the rest are then refitted).
    """
    if not rows:
        raise ValueError("no pair rows to fit")
    if mode not in ("flatten", "conditional"):
        raise ValueError(f"unknown mode {mode!r}")
    names = list(names) if names is not None else list(rows[0].z)
    spec = spec or FitSpec(predictors=tuple(names), include_intercept=False)
    Z = pair_matrix(rows, names)
    case_ids = np.array([r.case_id for r in rows])

    keep, reasons = prune_columns(Z, names, include_intercept=False)
    reasons = {n: ("dependence" if r == "collinear" else r) for n, r in reasons.items()}
    if not keep:
        raise ValueError("every difference column is degenerate")
    active = [names[j] for j in keep]
    fitted = None
    while active:
        cols = [names.index(n) for n in active]
        try:
            if mode == "flatten":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fit = fit_logistic(Z[:, cols], np.ones(len(rows)),
                                       FitSpec(predictors=tuple(active), include_intercept=False,
                                               max_iterations=spec.max_iterations,
                                               score_tolerance=spec.score_tolerance,
                                               ridge_fallback=spec.ridge_fallback,
                                               separation_guard=spec.separation_guard), names=active)
                fitted = (fit.coefficients, fit.covariance, fit.log_likelihood, fit.converged, fit.iterations_used)
            else:
                fitted = _fit_conditional_sets(Z[:, cols], case_ids, active, spec)
            break
        except SeparationError as exc:
            reasons[exc.predictor] = "separation"
            active.remove(exc.predictor)
    if fitted is None:
        raise ConvergenceError("no estimable terms remain after removing separated ones")
    beta, cov, loglik, converged, iterations = fitted
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    lookup = dict(zip(active, range(len(active))))
    out = []
    for n in names:
        if n in lookup:
            j = lookup[n]
            out.append(_row(n, beta[j], se[j], alpha))
        else:
            out.append(CoefficientRow(n, estimable=False, reason=reasons.get(n, "non-convergence")))
    diagnostics = {
        "mode": mode,
        "n_pairs": len(rows),
        "n_sets": int(np.unique(case_ids).size),
        "log_likelihood": float(loglik),
        "converged": bool(converged),
        "iterations": int(iterations),
        "non_estimable": {n: reasons[n] for n in names if n in reasons},
        "alpha": alpha,
    }
    return FitReport("conditional", out, diagnostics)


def stack_matched_sets(sets: Sequence[MatchedSet], data: Dataset, design: InteractionDesign) -> pd.DataFrame:
    """Case and control records of each set as rows, with interaction columns.

    Columns: ``set_id``, ``record_id``, ``role``, ``outcome``, ``nationality``,
    ``person`` (record id by nationality label), the design's originals and
    interactions.
    """
    era = data.column(design.era_indicator).astype(float)
    index = data.index()
    records = []
    for set_id, s in enumerate(sets):
        for role, rid in [("case", s.case_id)] + [("control", c) for c in s.control_ids]:
            if rid not in index:
                raise IntegrityError(f"matched set references unknown id {rid}")
            records.append((set_id, rid, role))
    pos = np.array([index[rid] for _, rid, _ in records], dtype=int)
    frame = pd.DataFrame({
        "set_id": [r[0] for r in records],
        "record_id": [r[1] for r in records],
        "role": [r[2] for r in records],
    })
    frame["outcome"] = data.column("outcome")[pos]
    frame["nationality"] = data.column("nationality")[pos]
    frame["person"] = [f"{rid}:{nat}" for rid, nat in zip(frame["record_id"], frame["nationality"])]
    for v in design.original_factors:
        frame[v] = data.column(v)[pos].astype(float)
    for v, name in zip(design.interacted(), design.interaction_factors):
        frame[name] = data.column(v)[pos].astype(float) * era[pos]
    return frame


def fit_paired_mixed(stacked: pd.DataFrame, design: InteractionDesign | Sequence[str], grouping: str = "nationality",
                     spec: MixedFitSpec | None = None, alpha: float = SIGNIFICANCE) -> FitReport:
    """Random-intercept logistic model on stacked (not differenced) pairs.

    ``grouping`` may be ``nationality``, ``set_id`` (pair) or ``person``.
    Degenerate, dependent and separating terms are reported as non-estimable,
    as are terms whose standard error cannot be computed.
    """
    names = design.names if isinstance(design, InteractionDesign) else list(design)
    if grouping not in stacked.columns:
        raise ValueError(f"grouping column {grouping!r} missing")
    X = stacked[names].to_numpy(dtype=float)
    y = stacked["outcome"].to_numpy(dtype=float)
    groups = stacked[grouping].astype(str).to_numpy()
    keep, reasons = prune_columns(X, names, include_intercept=True)
    reasons = {n: ("dependence" if r == "collinear" else r) for n, r in reasons.items()}
    active = [names[j] for j in keep]
    base = spec or MixedFitSpec(grouping=grouping)
    fit = None
    while True:
        s = MixedFitSpec(
            fixed=FitSpec(predictors=tuple(active), include_intercept=True,
                          max_iterations=base.fixed.max_iterations, score_tolerance=base.fixed.score_tolerance,
                          separation_guard=base.fixed.separation_guard),
            grouping=grouping, quadrature_points=base.quadrature_points,
            outer_tolerance=base.outer_tolerance, outer_max_iterations=base.outer_max_iterations,
            adaptive=base.adaptive, allow_single_group=base.allow_single_group,
        )
        cols = [names.index(n) for n in active]
        try:
            fit = fit_random_intercept_logistic(X[:, cols], y, groups, s, names=active)
            break
        except SeparationError as exc:
            if exc.predictor not in active:
                raise
            reasons[exc.predictor] = "separation"
            active.remove(exc.predictor)
    se = fit.std_errors
    lookup = {n: j for j, n in enumerate(fit.names)}
    out = []
    for n in [INTERCEPT] + names:
        if n in lookup:
            j = lookup[n]
            row = _row(n, fit.coefficients[j], se[j], alpha)
            if not row.estimable:
                reasons[n] = row.reason
            out.append(row)
        else:
            out.append(CoefficientRow(n, estimable=False, reason=reasons.get(n, "non-convergence")))
    diagnostics = {
        "sigma_u": fit.sigma_u,
        "sigma_u_se": None if math.isnan(fit.sigma_u_se) else fit.sigma_u_se,
        "boundary": fit.boundary,
        "log_likelihood": fit.log_likelihood,
        "converged": fit.converged,
        "gradient_max": fit.gradient_max,
        "iterations": fit.iterations,
        "grouping": grouping,
        "grouping_note": GROUPING_NOTE,
        "n_obs": fit.n_obs,
        "n_groups": fit.n_groups,
        "quadrature_points": fit.quadrature_points,
        "non_estimable": {n: reasons[n] for n in names if n in reasons},
        "alpha": alpha,
    }
    return FitReport("mixed", out, diagnostics)


def group_odds_summary(report: FitReport, groups: Mapping[str, Sequence[str]], significant_only: bool = True) -> dict:
    """Average odds ratios of named factor groups and their between-group ratios.

    Two aggregates are given: the arithmetic mean of the odds ratios and
    ``exp`` of the mean coefficient. Groups left empty after filtering are
    skipped with a warning.
    """
    summary = {}
    for group, members in groups.items():
        picked = []
        for name in members:
            row = report.row(name)
            if not row.estimable or (significant_only and not row.significant):
                continue
            picked.append(row)
        if not picked:
            warnings.warn(f"factor group {group!r} is empty; skipped", stacklevel=2)
            continue
        betas = np.array([r.estimate for r in picked])
        summary[group] = {
            "factors": [r.name for r in picked],
            "odds_ratios": [r.odds_ratio for r in picked],
            "arithmetic_mean_or": float(np.mean([r.odds_ratio for r in picked])),
            "exp_mean_beta": float(np.exp(betas.mean())),
        }
    ratios = {}
    keys = list(summary)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            ratios[f"{a}/{b}"] = {
                "arithmetic_mean_or": summary[a]["arithmetic_mean_or"] / summary[b]["arithmetic_mean_or"],
                "exp_mean_beta": summary[a]["exp_mean_beta"] / summary[b]["exp_mean_beta"],
            }
    return {"groups": summary, "ratios": ratios, "significant_only": significant_only}
