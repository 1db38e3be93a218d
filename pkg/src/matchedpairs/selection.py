"""Greedy forward selection of propensity-model terms by deviance."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import FitError, SchemaError, SeparationError
from .glm import FitSpec, fit_logistic
from .glmm import MixedFitSpec, fit_random_intercept_logistic

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionStep:
    variable: str
    deviance: float
    deviance_explained: float
    gain: float


@dataclass
class SelectionTrace:
    steps: list[SelectionStep]
    selected: list[str]
    threshold: float
    mode: str
    null_deviance: float
    n_obs: int
    skipped: dict = field(default_factory=dict)
    stop_candidate: tuple | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["steps"] = [asdict(s) for s in self.steps]
        d["stop_candidate"] = list(self.stop_candidate) if self.stop_candidate else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionTrace":
        d = dict(d)
        d["steps"] = [SelectionStep(**s) for s in d["steps"]]
        d["stop_candidate"] = tuple(d["stop_candidate"]) if d.get("stop_candidate") else None
        return cls(**d)

    def plot_rows(self) -> list[tuple[int, str, float]]:
        """``(step, variable, deviance)`` rows of the deviance plot; step 0 is the null model."""
        rows = [(0, "(null)", self.null_deviance)]
        rows += [(i + 1, s.variable, s.deviance) for i, s in enumerate(self.steps)]
        return rows

    def write_plot_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "variable", "deviance"])
            for step, var, dev in self.plot_rows():
                w.writerow([step, var, repr(float(dev))])


def default_threshold(n_obs: int) -> float:
    return 2.0 * math.log(n_obs)


def _deviance(X, y, groups, names, quadrature_points):
    if groups is None:
        return fit_logistic(X, y, FitSpec(predictors=names), names=names).deviance
    spec = MixedFitSpec(quadrature_points=quadrature_points, compute_covariance=False)
    return -2.0 * fit_random_intercept_logistic(X, y, groups, spec, names=names).log_likelihood


def forward_select(
    data: Dataset,
    candidates: Sequence[str],
    random_group: str | None = None,
    threshold: float | None = None,
    response: str = "outcome",
    quadrature_points: int = 25,
    threads: int = 1,
) -> SelectionTrace:
    """Add, one at a time, the candidate that most reduces the deviance.

    Each step refits the outcome model with every remaining candidate added
    to the current set (with a random intercept on ``random_group`` when
    given). Selection stops when the best gain falls below ``threshold``
    (default ``2 log n``) or is not positive. Candidates are scanned in
    sorted-name order and ties keep the first, so the input order does not
    matter. Candidates whose fit separates are skipped with a warning.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    missing = [c for c in candidates if c not in data.columns]
    if missing:
        raise SchemaError(f"unknown candidate columns {missing}")
    if threshold is None:
        threshold = default_threshold(len(data))
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    y = data.column(response).astype(float)
    groups = data.column(random_group) if random_group else None
    remaining = sorted(set(candidates))
    current: list[str] = []
    skipped = {}

    def fit(names):
        return _deviance(data.matrix(names), y, groups, list(names), quadrature_points)

    null_dev = fit([])
    dev = null_dev
    steps = []
    stop = None
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while remaining:
            constant = [c for c in remaining if np.ptp(data.column(c)) == 0]
            to_fit = [c for c in remaining if c not in constant]

            def evaluate(c):
                try:
                    return fit(current + [c]), None
                except SeparationError as exc:
                    return None, f"separation: {exc}"
                except FitError as exc:
                    return None, f"fit failed: {exc}"

            results = dict(zip(to_fit, pool.map(evaluate, to_fit) if pool else map(evaluate, to_fit)))
            gains = {}
            for c in remaining:
                if c in constant:
                    gains[c] = 0.0
                    continue
                new_dev, problem = results[c]
                if problem:
                    warnings.warn(f"skipping candidate {c!r}: {problem}", stacklevel=2)
                    skipped[c] = problem
                    continue
                gains[c] = dev - new_dev
            remaining = [c for c in remaining if c in gains]
            if not gains:
                break
            top = max(gains.values())
            best = min(c for c in gains if gains[c] == top)
            gain = gains[best]
            if gain < threshold or gain <= 0:
                stop = (best, float(gain))
                break
            dev = results[best][0]
            current.append(best)
            remaining.remove(best)
            steps.append(SelectionStep(best, float(dev), float(null_dev - dev), float(gain)))
            log.debug("selected %s (gain %.3f)", best, gain)
    finally:
        if pool:
            pool.shutdown()
    return SelectionTrace(
        steps=steps,
        selected=list(current),
        threshold=float(threshold),
        mode="with-random-intercept" if random_group else "fixed-only",
        null_deviance=float(null_dev),
        n_obs=len(data),
        skipped=skipped,
        stop_candidate=stop,
    )
