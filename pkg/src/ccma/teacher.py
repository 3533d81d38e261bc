"""Zero-shot class posteriors from prototype similarities.

The teacher never trains: logits are temperature-scaled cosine similarities
between unit-norm features and unit-norm class prototypes, computed once per
experiment and reused every round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feature_store import EmbeddingTable, PrototypeTable


@dataclass
class TeacherModel:
    prototypes: PrototypeTable
    tau: float = 0.01

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.prototypes.normalized:
            raise ValueError("teacher prototypes must be l2-normalized")


def validate_posteriors(p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Check a matrix is row-stochastic and return it as float64."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("posterior matrix must be 2-D")
    if np.any(p < -tol):
        raise ValueError("posterior matrix has negative entries")
    err = np.max(np.abs(p.sum(axis=1) - 1.0))
    if err > tol:
        raise ValueError(f"posterior rows sum to 1 within {tol}, worst error {err:.2e}")
    return p


def teacher_logits(model: TeacherModel, feats: EmbeddingTable) -> np.ndarray:
    """Similarity logits: entry (i, c) = <feat_i, proto_c> / tau."""
    if not feats.normalized:
        raise ValueError("teacher features must be l2-normalized")
    if feats.d != model.prototypes.d:
        raise ValueError(f"feature dim {feats.d} != prototype dim {model.prototypes.d}")
    return feats.data.astype(np.float64) @ model.prototypes.rows.astype(np.float64).T / model.tau


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Max-shifted row softmax; safe for arbitrarily large finite logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if np.any(np.isnan(logits)):
        raise ValueError("logits contain NaN")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def teacher_posterior(model: TeacherModel, feats: EmbeddingTable) -> np.ndarray:
    return softmax_rows(teacher_logits(model, feats))
