"""Comparison acquisition strategies: random, uncertainty family, coreset,
BALD, and gradient-embedding (BADGE-style) selection.

Strategies that rank rows return positions into the matrices they were
given; strategies that receive index sets return global indices. Every
strategy is a pure function of its inputs and seed.
"""

from __future__ import annotations

import warnings

import numpy as np

from .feature_store import EmbeddingTable
from .rng import make_rng
from .scoring import entropy_rows
from .selection import _sqdist, kmeans_pp_indices
from .teacher import validate_posteriors

_SALT_RANDOM = 401
_SALT_BADGE = 402

UNCERTAINTY_MODES = ("least_confidence", "entropy", "margins")


def _top_positions(keys: np.ndarray, B: int) -> np.ndarray:
    """First B positions by descending key, ties to the smaller position."""
    order = np.lexsort((np.arange(keys.size), -keys))
    return order[: min(B, keys.size)]


def select_random(unlabeled: np.ndarray, B: int, seed: int) -> np.ndarray:
    """Uniform draw without replacement from the unlabeled index set."""
    unlabeled = np.asarray(unlabeled, dtype=np.int64)
    if unlabeled.size < 1:
        raise ValueError("unlabeled pool is empty")
    rng = make_rng(seed, _SALT_RANDOM)
    take = min(B, unlabeled.size)
    return unlabeled[rng.choice(unlabeled.size, size=take, replace=False)]


def select_uncertainty(posteriors: np.ndarray, B: int, mode: str) -> np.ndarray:
    """Rank rows by a point-estimate uncertainty criterion; returns positions."""
    p = validate_posteriors(posteriors)
    if mode == "least_confidence":
        keys = -p.max(axis=1)
    elif mode == "entropy":
        keys = entropy_rows(p)
    elif mode == "margins":
        part = np.sort(p, axis=1)
        keys = -(part[:, -1] - part[:, -2])
    else:
        raise ValueError(f"unknown uncertainty mode {mode!r}, expected one of {UNCERTAINTY_MODES}")
    return _top_positions(keys, B)


def select_coreset(
    student_embeds: EmbeddingTable,
    labeled: np.ndarray,
    unlabeled: np.ndarray,
    B: int,
) -> np.ndarray:
    """k-center greedy: repeatedly take the point farthest from the cover.

    With an empty cover, the first pick is the point farthest from the
    unlabeled centroid.
    """
    labeled = np.asarray(labeled, dtype=np.int64)
    unlabeled = np.asarray(unlabeled, dtype=np.int64)
    X = student_embeds.data.astype(np.float64)
    U = X[unlabeled]
    take = min(B, unlabeled.size)
    picks = np.empty(take, dtype=np.int64)

    if labeled.size:
        min_d2 = _sqdist(U, X[labeled]).min(axis=1)
    else:
        d2 = _sqdist(U, U.mean(axis=0, keepdims=True)).ravel()
        first = int(d2.argmax())
        picks[0] = unlabeled[first]
        min_d2 = _sqdist(U, U[first : first + 1]).ravel()

    start = 0 if labeled.size else 1
    for i in range(start, take):
        far = int(min_d2.argmax())
        picks[i] = unlabeled[far]
        min_d2 = np.minimum(min_d2, _sqdist(U, U[far : far + 1]).ravel())
    return picks


def select_bald(mc_posteriors: np.ndarray, B: int) -> np.ndarray:
    """Mutual information between predictions and masks: H(mean) - mean(H)."""
    mc = np.asarray(mc_posteriors, dtype=np.float64)
    if mc.ndim != 3 or mc.shape[0] < 2:
        raise ValueError("need a (K, n, C) stack with K >= 2")
    mean_p = mc.mean(axis=0)
    scores = entropy_rows(mean_p) - np.stack([entropy_rows(mc[k]) for k in range(mc.shape[0])]).mean(axis=0)
    return _top_positions(scores, B)


def select_badge(grad_embeds: np.ndarray, B: int, seed: int) -> np.ndarray:
    """k-means++ seeding over gradient-embedding rows; returns the seed positions."""
    G = np.asarray(grad_embeds, dtype=np.float64)
    if G.ndim != 2:
        raise ValueError("gradient embeddings must be 2-D")
    if B > G.shape[0]:
        raise ValueError(f"B={B} exceeds {G.shape[0]} rows")
    rng = make_rng(seed, _SALT_BADGE)
    if not np.any(G):
        warnings.warn("all-zero gradient embeddings, falling back to random", RuntimeWarning)
        return rng.choice(G.shape[0], size=B, replace=False).astype(np.int64)
    return kmeans_pp_indices(G, B, rng)
