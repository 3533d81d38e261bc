"""Batch selection: subpooling, oversampling, and coverage-greedy picking.

The full strategy runs in three stages over the unlabeled pool: compress it
to a k-means-representative subpool, keep the kappa*B highest disagreement
scores, then greedily maximize the uncertainty-weighted coverage objective

    F(S) = (1/|P|) * sum_u delta(u) * max_{s in S} exp(-||u - s||^2 / (2 sigma^2))

over the scored pool P. Ablation switches turn the subpool and the final
diversity stage on and off independently.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .conformal import (
    COVERAGE_TARGET,
    SIZE_TARGET,
    ConformalCalibrator,
    calibrate_coverage_target,
    calibrate_size_target,
    nonconformity,
    predict_sets,
)
from .feature_store import EmbeddingTable, PoolState
from .rng import make_rng
from .scoring import DEFAULT_GATE_EPS, PoolScores, score_pool

_SALT_SUBPOOL = 301
_SALT_SIGMA = 302

VARIANTS = ("V1", "V2", "V3", "V4", "V5")
_VARIANT_SETTINGS = {
    "V1": ("selective", True),
    "V2": ("none", True),
    "V3": ("random", True),
    "V4": ("selective", False),
    "V5": ("none", False),
}


@dataclass
class SelectionConfig:
    batch_B: int
    kappa: float = 20.0
    subpool_size: int | None = None  # None -> min(|U|, 50 * batch_B)
    subpool_mode: str = "selective"
    diversity: bool = True
    kernel_sigma: float | str = "median"

    def __post_init__(self) -> None:
        if self.batch_B < 1:
            raise ValueError("batch_B must be >= 1")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.subpool_mode not in ("selective", "random", "none"):
            raise ValueError(f"unknown subpool_mode {self.subpool_mode!r}")
        if self.subpool_size is not None and self.subpool_size < self.batch_B:
            raise ValueError("subpool_size must be >= batch_B")
        if not isinstance(self.kernel_sigma, str) and not self.kernel_sigma > 0:
            raise ValueError("kernel_sigma must be positive or 'median'")

    @classmethod
    def for_variant(cls, variant: str, batch_B: int, **overrides) -> "SelectionConfig":
        """Ablation presets: subpool mode and diversity per variant name."""
        if variant not in _VARIANT_SETTINGS:
            raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        mode, diversity = _VARIANT_SETTINGS[variant]
        return replace(cls(batch_B=batch_B, **overrides), subpool_mode=mode, diversity=diversity)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float


def _as_matrix(points: EmbeddingTable | np.ndarray) -> np.ndarray:
    if isinstance(points, EmbeddingTable):
        return points.data.astype(np.float64)
    return np.asarray(points, dtype=np.float64)


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    d = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def kmeans_pp_indices(
    X: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding: first index uniform, the rest by D^2 sampling."""
    n = X.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = _sqdist(X, X[chosen[0] : chosen[0] + 1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # All remaining mass collapsed (duplicate points): fall back to
            # a uniform draw among indices not yet chosen.
            remaining = np.setdiff1d(np.arange(n), chosen[:j])
            chosen[j] = rng.choice(remaining)
        else:
            chosen[j] = rng.choice(n, p=d2 / total)
        d2 = np.minimum(d2, _sqdist(X, X[chosen[j] : chosen[j] + 1]).ravel())
    return chosen


def kmeans(
    points: EmbeddingTable | np.ndarray, k: int, seed: int, max_iter: int = 100
) -> KMeansResult:
    """Lloyd iterations from a k-means++ start, run to an assignment fixpoint.

    Empty clusters are reseeded to the point currently farthest from its
    centroid, so exactly k clusters survive.
    """
    X = _as_matrix(points)
    n = X.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} outside [1, {n}]")
    rng = make_rng(seed)
    centroids = X[kmeans_pp_indices(X, k, rng)].copy()
    assignment = np.full(n, -1, dtype=np.int64)

    for _ in range(max_iter):
        d2 = _sqdist(X, centroids)
        new_assignment = d2.argmin(axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        point_d2 = d2[np.arange(n), assignment]
        for j in range(k):
            members = assignment == j
            if members.any():
                centroids[j] = X[members].mean(axis=0)
            else:
                far = int(point_d2.argmax())
                centroids[j] = X[far]
                assignment[far] = j
                point_d2[far] = 0.0

    d2 = _sqdist(X, centroids)
    assignment = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignment].sum())
    return KMeansResult(centroids=centroids, assignment=assignment, inertia=inertia)


def build_subpool(
    unlabeled_feats: EmbeddingTable,
    unlabeled_indices: np.ndarray,
    cfg: SelectionConfig,
    seed: int,
) -> np.ndarray:
    """Candidate subset of the unlabeled pool, as sorted global indices."""
    unlabeled_indices = np.asarray(unlabeled_indices, dtype=np.int64)
    n = unlabeled_indices.size
    if unlabeled_feats.n != n:
        raise ValueError("features and indices disagree on pool size")
    if cfg.subpool_mode == "none":
        return np.sort(unlabeled_indices)

    size = cfg.subpool_size if cfg.subpool_size is not None else 50 * cfg.batch_B
    if size > n:
        warnings.warn(f"subpool_size {size} clamped to pool size {n}", RuntimeWarning)
        size = n

    if cfg.subpool_mode == "random":
        rng = make_rng(seed, _SALT_SUBPOOL)
        picks = rng.choice(n, size=size, replace=False)
        return np.sort(unlabeled_indices[picks])

    X = unlabeled_feats.data.astype(np.float64)
    result = kmeans(X, size, seed=seed)
    d2 = _sqdist(result.centroids, X)
    order = np.argsort(d2, axis=1, kind="stable")
    taken: set[int] = set()
    picks = np.empty(size, dtype=np.int64)
    for j in range(size):
        # Nearest point to centroid j not claimed by an earlier centroid.
        for cand in order[j]:
            if int(cand) not in taken:
                taken.add(int(cand))
                picks[j] = cand
                break
    return np.sort(unlabeled_indices[picks])


def top_kappa(scores: np.ndarray, B: int, kappa: float) -> np.ndarray:
    """Positions of the ceil(kappa*B) largest scores, ties to the smaller index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    m = min(math.ceil(kappa * B), scores.size)
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:m]


def median_sigma(feats: np.ndarray, seed: int, sample: int = 1024) -> float:
    """Median pairwise distance of a random subsample (the median heuristic)."""
    X = _as_matrix(feats)
    n = X.shape[0]
    if n > sample:
        rng = make_rng(seed, _SALT_SIGMA)
        X = X[rng.choice(n, size=sample, replace=False)]
    d2 = _sqdist(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(np.sqrt(d2[iu])))
    return max(med, 1e-12)


def coverage_objective(
    pool_feats: np.ndarray, pool_scores: np.ndarray, selected: np.ndarray, sigma: float
) -> float:
    """F(S): mean over the pool of score times best kernel similarity to S."""
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size == 0:
        return 0.0
    P = _as_matrix(pool_feats)
    K = np.exp(-_sqdist(P, P[selected]) / (2.0 * sigma * sigma))
    return float((np.asarray(pool_scores) * K.max(axis=1)).mean())


def coverage_greedy(
    candidates: np.ndarray,
    pool_feats: EmbeddingTable | np.ndarray,
    pool_scores: np.ndarray,
    B: int,
    sigma: float,
) -> np.ndarray:
    """Greedy maximization of the uncertainty-weighted coverage objective.

    ``candidates`` are positions into the scored pool rows; returns up to B of
    them in pick order. Ties go to the smaller candidate position.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ValueError("no candidates to select from")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    P = _as_matrix(pool_feats)
    pool_scores = np.asarray(pool_scores, dtype=np.float64)
    if candidates.size < B:
        warnings.warn(
            f"only {candidates.size} candidates for batch of {B}", RuntimeWarning
        )
        return np.sort(candidates)

    # Sort so np.argmax's first-wins rule breaks ties toward smaller positions.
    candidates = np.sort(candidates)
    Kw = pool_scores[:, None] * np.exp(-_sqdist(P, P[candidates]) / (2.0 * sigma * sigma))
    covered = np.zeros(P.shape[0])
    chosen_mask = np.zeros(candidates.size, dtype=bool)
    picks = np.empty(B, dtype=np.int64)
    for step in range(B):
        gains = np.maximum(Kw - covered[:, None], 0.0).sum(axis=0)
        gains[chosen_mask] = -np.inf
        best = int(np.argmax(gains))
        chosen_mask[best] = True
        picks[step] = candidates[best]
        covered = np.maximum(covered, Kw[:, best])
    return picks


@dataclass
class SelectionOutcome:
    """One strategy invocation: the batch plus everything worth reporting."""

    batch: np.ndarray
    subpool: np.ndarray
    scores: PoolScores
    cal_s: ConformalCalibrator
    cal_t: ConformalCalibrator
    sigma: float | None = None


def calibrate_round(
    p_subpool: np.ndarray,
    mode: str,
    target: float,
    cal_scores_at_truth: np.ndarray | None,
    tol: float,
) -> ConformalCalibrator:
    """Fit one model's calibrator for this round.

    Size mode is label-free and runs on the candidate subpool; coverage mode
    needs true-label scores from the held-out calibration split.
    """
    if mode == SIZE_TARGET:
        return calibrate_size_target(nonconformity(p_subpool), target, tol=tol)
    if mode == COVERAGE_TARGET:
        if cal_scores_at_truth is None or cal_scores_at_truth.size == 0:
            raise ValueError("coverage-targeted calibration needs a non-empty calibration split")
        return calibrate_coverage_target(cal_scores_at_truth, target)
    raise ValueError(f"unknown calibration mode {mode!r}")


def score_candidates(
    p_s: np.ndarray,
    p_t: np.ndarray,
    cal_s: ConformalCalibrator,
    cal_t: ConformalCalibrator,
    eps: float = DEFAULT_GATE_EPS,
) -> PoolScores:
    """Conformal sets and disagreement scores for one candidate pool."""
    sets_s = predict_sets(cal_s, nonconformity(p_s))
    sets_t = predict_sets(cal_t, nonconformity(p_t))
    return score_pool(p_s, p_t, sets_s, sets_t, eps=eps)


def ccma_select(
    pool: PoolState,
    teacher_feats: EmbeddingTable,
    p_s_all: np.ndarray,
    p_t_all: np.ndarray,
    cfg: SelectionConfig,
    cal_s: ConformalCalibrator | None = None,
    cal_t: ConformalCalibrator | None = None,
    size_targets: tuple[float, float] = (5.0, 3.0),
    size_tol: float = 0.05,
    eps: float = DEFAULT_GATE_EPS,
    seed: int = 0,
) -> SelectionOutcome:
    """Full selection round: subpool, calibrate, score, oversample, diversify.

    ``p_s_all`` / ``p_t_all`` are posteriors over the whole train pool;
    pre-fitted calibrators (e.g. coverage-targeted ones) may be passed in,
    otherwise size-targeted thresholds are fitted on the subpool with targets
    ``size_targets`` = (student, teacher).
    """
    subpool = build_subpool(
        teacher_feats.take(pool.unlabeled), pool.unlabeled, cfg, seed
    )
    p_s = p_s_all[subpool]
    p_t = p_t_all[subpool]
    if cal_s is None:
        cal_s = calibrate_size_target(nonconformity(p_s), size_targets[0], tol=size_tol)
    if cal_t is None:
        cal_t = calibrate_size_target(nonconformity(p_t), size_targets[1], tol=size_tol)
    scores = score_candidates(p_s, p_t, cal_s, cal_t, eps=eps)

    B = min(cfg.batch_B, subpool.size)
    shortlist = top_kappa(scores.delta, B, cfg.kappa)
    if not cfg.diversity:
        batch = subpool[shortlist[:B]]
        return SelectionOutcome(batch, subpool, scores, cal_s, cal_t)

    if isinstance(cfg.kernel_sigma, str):
        sigma = median_sigma(teacher_feats.take(subpool).data, seed)
    else:
        sigma = float(cfg.kernel_sigma)
    picks = coverage_greedy(
        shortlist, teacher_feats.take(subpool).data, scores.delta, B, sigma
    )
    return SelectionOutcome(subpool[picks], subpool, scores, cal_s, cal_t, sigma=sigma)
