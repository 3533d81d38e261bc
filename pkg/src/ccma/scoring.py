"""Cross-modal disagreement scores and their pool-level diagnostics.

Per sample: take the union of the two conformal label sets (falling back to
the pair of top-1 labels when both sets are empty), renormalize both
posteriors on it, measure their Jensen-Shannon divergence, and blend that
with the student's full-distribution entropy through a confidence gate
favoring whichever model is currently surer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import PredictionSets

LN2 = float(np.log(2.0))
DEFAULT_GATE_EPS = 1e-8
_MASS_FLOOR = 1e-12


@dataclass
class ScoreRecord:
    """Everything the scorer knows about one sample."""

    delta: float
    w_js: float
    js: float
    h_s: float
    omega_size: int
    overlap: int
    symdiff: int
    top1_disagree: bool
    conf_s: float
    conf_t: float


@dataclass
class PoolScores:
    """Column-wise ScoreRecords for a whole candidate pool."""

    delta: np.ndarray
    w_js: np.ndarray
    js: np.ndarray
    h_s: np.ndarray
    omega_size: np.ndarray
    overlap: np.ndarray
    symdiff: np.ndarray
    top1_disagree: np.ndarray
    conf_s: np.ndarray
    conf_t: np.ndarray

    def __len__(self) -> int:
        return self.delta.size

    def record(self, i: int) -> ScoreRecord:
        return ScoreRecord(
            delta=float(self.delta[i]),
            w_js=float(self.w_js[i]),
            js=float(self.js[i]),
            h_s=float(self.h_s[i]),
            omega_size=int(self.omega_size[i]),
            overlap=int(self.overlap[i]),
            symdiff=int(self.symdiff[i]),
            top1_disagree=bool(self.top1_disagree[i]),
            conf_s=float(self.conf_s[i]),
            conf_t=float(self.conf_t[i]),
        )

    def records(self) -> list[ScoreRecord]:
        return [self.record(i) for i in range(len(self))]


@dataclass
class DiagnosticsSummary:
    mean_overlap: float
    mean_symdiff: float
    frac_top1_disagree: float
    mean_js: float
    mean_conf_s: float
    mean_conf_t: float


def union_support(
    set_s: np.ndarray, set_t: np.ndarray, top_s: int, top_t: int
) -> np.ndarray:
    """Union of two label sets; empty unions fall back to the two top-1 labels."""
    set_s = np.asarray(set_s, dtype=bool)
    set_t = np.asarray(set_t, dtype=bool)
    if set_s.shape != set_t.shape:
        raise ValueError("set widths differ")
    omega = set_s | set_t
    if not omega.any():
        omega = np.zeros_like(omega)
        omega[top_s] = True
        omega[top_t] = True
    return omega


def renormalize(p: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Restrict a distribution to ``omega`` and rescale to total mass 1."""
    p = np.asarray(p, dtype=np.float64)
    omega = np.asarray(omega, dtype=bool)
    if not omega.any():
        raise ValueError("support is empty")
    mass = float(p[omega].sum())
    if mass < _MASS_FLOOR:
        raise ValueError(f"mass inside support is {mass:.3e}, cannot renormalize")
    out = np.where(omega, p, 0.0)
    return out / mass


def _kl_terms(p: np.ndarray, m: np.ndarray) -> np.ndarray:
    # 0 * log 0 := 0; where p > 0, m >= p/2 > 0 so the log is finite.
    with np.errstate(divide="ignore", invalid="ignore"):
        t = p * (np.log(p) - np.log(m))
    return np.where(p > 0, t, 0.0)


def js_divergence(p: np.ndarray, r: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats, exactly symmetric, in [0, ln 2]."""
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if p.shape != r.shape:
        raise ValueError("distributions differ in length")
    m = 0.5 * (p + r)
    js = 0.5 * float(_kl_terms(p, m).sum()) + 0.5 * float(_kl_terms(r, m).sum())
    return max(js, 0.0)


def js_divergence_rows(P: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Row-wise JS divergence between two stacks of distributions."""
    P = np.asarray(P, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    M = 0.5 * (P + R)
    js = 0.5 * _kl_terms(P, M).sum(axis=1) + 0.5 * _kl_terms(R, M).sum(axis=1)
    return np.maximum(js, 0.0)


def confidence_gate(conf_t: float, conf_s: float, eps: float = DEFAULT_GATE_EPS) -> float:
    """Teacher share of the blend: conf_t / (conf_t + conf_s + eps)."""
    return conf_t / (conf_t + conf_s + eps)


def entropy_rows(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = P * np.log(P)
    return -np.where(P > 0, t, 0.0).sum(axis=1)


def score_pool(
    p_s: np.ndarray,
    p_t: np.ndarray,
    sets_s: PredictionSets,
    sets_t: PredictionSets,
    eps: float = DEFAULT_GATE_EPS,
) -> PoolScores:
    """Vectorized disagreement scoring of a whole candidate pool.

    Probabilities are floored at 1e-12 before renormalizing onto the union
    support (the same clamp nonconformity scores use), so a sharp model whose
    mass lies entirely outside the other model's set yields a near-maximal
    divergence instead of an error.
    """
    p_s = np.asarray(p_s, dtype=np.float64)
    p_t = np.asarray(p_t, dtype=np.float64)
    if p_s.shape != p_t.shape:
        raise ValueError("posterior matrices differ in shape")
    if sets_s.mask.shape != p_s.shape or sets_t.mask.shape != p_t.shape:
        raise ValueError("set masks do not match posterior shape")
    n = p_s.shape[0]

    top_s = p_s.argmax(axis=1)
    top_t = p_t.argmax(axis=1)
    omega = sets_s.mask | sets_t.mask
    empty = ~omega.any(axis=1)
    if empty.any():
        rows = np.where(empty)[0]
        omega[rows, top_s[rows]] = True
        omega[rows, top_t[rows]] = True

    ps_floor = np.where(omega, np.maximum(p_s, _MASS_FLOOR), 0.0)
    pt_floor = np.where(omega, np.maximum(p_t, _MASS_FLOOR), 0.0)
    ps_omega = ps_floor / ps_floor.sum(axis=1, keepdims=True)
    pt_omega = pt_floor / pt_floor.sum(axis=1, keepdims=True)

    js = js_divergence_rows(ps_omega, pt_omega)
    h_s = entropy_rows(p_s)
    conf_s = p_s[np.arange(n), top_s]
    conf_t = p_t[np.arange(n), top_t]
    w_js = conf_t / (conf_t + conf_s + eps)
    delta = w_js * js + (1.0 - w_js) * h_s

    return PoolScores(
        delta=delta,
        w_js=w_js,
        js=js,
        h_s=h_s,
        omega_size=omega.sum(axis=1),
        overlap=(sets_s.mask & sets_t.mask).sum(axis=1),
        symdiff=(sets_s.mask ^ sets_t.mask).sum(axis=1),
        top1_disagree=top_s != top_t,
        conf_s=conf_s,
        conf_t=conf_t,
    )


def ccma_score(
    p_s: np.ndarray,
    p_t: np.ndarray,
    set_s: np.ndarray,
    set_t: np.ndarray,
    eps: float = DEFAULT_GATE_EPS,
) -> ScoreRecord:
    """Disagreement score of a single sample; see :func:`score_pool`."""
    pool = score_pool(
        np.atleast_2d(p_s),
        np.atleast_2d(p_t),
        PredictionSets(np.atleast_2d(set_s)),
        PredictionSets(np.atleast_2d(set_t)),
        eps=eps,
    )
    return pool.record(0)


def pool_diagnostics(records: PoolScores | list[ScoreRecord]) -> DiagnosticsSummary:
    """Pool means of the disagreement diagnostics."""
    if isinstance(records, PoolScores):
        if len(records) == 0:
            raise ValueError("no records to summarize")
        return DiagnosticsSummary(
            mean_overlap=float(records.overlap.mean()),
            mean_symdiff=float(records.symdiff.mean()),
            frac_top1_disagree=float(records.top1_disagree.mean()),
            mean_js=float(records.js.mean()),
            mean_conf_s=float(records.conf_s.mean()),
            mean_conf_t=float(records.conf_t.mean()),
        )
    if not records:
        raise ValueError("no records to summarize")
    return DiagnosticsSummary(
        mean_overlap=float(np.mean([r.overlap for r in records])),
        mean_symdiff=float(np.mean([r.symdiff for r in records])),
        frac_top1_disagree=float(np.mean([r.top1_disagree for r in records])),
        mean_js=float(np.mean([r.js for r in records])),
        mean_conf_s=float(np.mean([r.conf_s for r in records])),
        mean_conf_t=float(np.mean([r.conf_t for r in records])),
    )
