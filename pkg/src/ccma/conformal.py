"""Split-conformal set predictors for teacher and student posteriors.

Two calibration modes share one threshold semantics (label c enters the set
when its nonconformity is <= q): size targeting solves for q by bisection so
the mean set size over a calibration matrix hits a target, which needs no
labels; coverage targeting takes the finite-sample quantile of true-label
scores and inherits the usual marginal guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .teacher import validate_posteriors

SIZE_TARGET = "size_target"
COVERAGE_TARGET = "coverage_target"

PROB_FLOOR = 1e-12
BISECTION_MAX_ITER = 60
DEFAULT_SIZE_TOL = 0.05


@dataclass
class ConformalCalibrator:
    mode: str
    target: float
    q: float = math.nan
    fitted: bool = False

    def __post_init__(self) -> None:
        if self.mode not in (SIZE_TARGET, COVERAGE_TARGET):
            raise ValueError(f"unknown calibration mode {self.mode!r}")
        if self.fitted and not math.isfinite(self.q):
            raise ValueError("fitted calibrator must carry a finite threshold")


@dataclass
class PredictionSets:
    """Per-sample label sets as an n-by-C boolean mask; empty sets are legal."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValueError("set mask must be 2-D")

    @property
    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def __len__(self) -> int:
        return self.mask.shape[0]


def nonconformity(p: np.ndarray) -> np.ndarray:
    """Negative log probability, floored so zero-probability entries stay finite."""
    p = validate_posteriors(p)
    return -np.log(np.maximum(p, PROB_FLOOR))


def mean_set_size(scores: np.ndarray, q: float) -> float:
    return float((scores <= q).sum(axis=1).mean())


def calibrate_size_target(
    scores: np.ndarray, s: float, tol: float = DEFAULT_SIZE_TOL
) -> ConformalCalibrator:
    """Bisection for the threshold whose mean set size over ``scores`` is ~s.

    Works on score matrices alone (the size criterion never looks at labels),
    so it can run on the unlabeled candidate pool.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise ValueError("need a non-empty n-by-C score matrix")
    C = scores.shape[1]
    if not 1 <= s <= C:
        raise ValueError(f"target size {s} outside [1, {C}]")

    lo, hi = float(scores.min()), float(scores.max())
    best_q, best_err = hi, abs(mean_set_size(scores, hi) - s)
    if abs(mean_set_size(scores, lo) - s) <= best_err:
        best_q, best_err = lo, abs(mean_set_size(scores, lo) - s)
    if mean_set_size(scores, lo) >= s:
        # Even the smallest threshold over-covers; cannot go lower.
        return ConformalCalibrator(SIZE_TARGET, s, q=lo, fitted=True)
    for _ in range(BISECTION_MAX_ITER):
        if best_err <= tol:
            break
        mid = 0.5 * (lo + hi)
        size = mean_set_size(scores, mid)
        if abs(size - s) < best_err:
            best_q, best_err = mid, abs(size - s)
        if size < s:
            lo = mid
        else:
            hi = mid
    return ConformalCalibrator(SIZE_TARGET, s, q=best_q, fitted=True)


def calibrate_coverage_target(scores_at_truth: np.ndarray, alpha: float) -> ConformalCalibrator:
    """Finite-sample quantile threshold: the ceil((n+1)(1-alpha))-th order statistic."""
    scores = np.sort(np.asarray(scores_at_truth, dtype=np.float64).ravel())
    n = scores.size
    if n < 1:
        raise ValueError("calibration scores are empty")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    rank = math.ceil((n + 1) * (1 - alpha))
    q = float(scores[min(rank, n) - 1])
    return ConformalCalibrator(COVERAGE_TARGET, alpha, q=q, fitted=True)


def predict_sets(cal: ConformalCalibrator, scores: np.ndarray) -> PredictionSets:
    """All labels whose score is <= the fitted threshold; may be empty."""
    if not cal.fitted:
        raise ValueError("calibrator is not fitted")
    scores = np.asarray(scores, dtype=np.float64)
    return PredictionSets(scores <= cal.q)


def audit(sets: PredictionSets, labels: np.ndarray) -> tuple[float, float]:
    """(fraction of samples whose true label is inside its set, mean set size)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size != len(sets):
        raise ValueError("labels length does not match sets")
    coverage = float(sets.mask[np.arange(labels.size), labels].mean())
    return coverage, float(sets.sizes.mean())
