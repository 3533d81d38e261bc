"""Linear softmax head over frozen student features.

Trained from scratch every round (cold start) by minibatch cross-entropy
with inverted dropout on the inputs and a decoupled-weight-decay adaptive
update. Prediction modes: probabilities (``forward``), gradient embeddings
(``grad_embedding``), and MC-dropout samples (``mc_dropout_posteriors``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .feature_store import EmbeddingTable
from .rng import make_rng
from .teacher import softmax_rows

_SALT_INIT = 201
_SALT_TRAIN = 202
_SALT_MODEL = 203
_SALT_MC = 204


@dataclass
class TrainConfig:
    lr: float = 1e-2
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class StudentModel:
    W: np.ndarray  # (C, D)
    b: np.ndarray  # (C,)
    rho: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: make_rng(0, _SALT_MODEL), repr=False)

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("parameters must be finite")
        if not 0 <= self.rho < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]


def init_student(n_classes: int, dim: int, seed: int, rho: float = 0.0) -> StudentModel:
    """Fresh head: Gaussian weights with std 1/sqrt(dim), zero bias."""
    if n_classes < 1 or dim < 1:
        raise ValueError("n_classes and dim must be >= 1")
    rng = make_rng(seed, _SALT_INIT)
    W = rng.standard_normal((n_classes, dim)) / np.sqrt(dim)
    b = np.zeros(n_classes)
    return StudentModel(W, b, rho=rho, rng=make_rng(seed, _SALT_MODEL))


def _dropout(X: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    keep = 1.0 - rho
    mask = rng.random(X.shape) < keep
    return X * mask / keep


def forward(
    model: StudentModel,
    feats: EmbeddingTable,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Row-stochastic posterior; ``training`` applies an inverted-dropout mask."""
    if feats.d != model.dim:
        raise ValueError(f"feature dim {feats.d} != model dim {model.dim}")
    X = feats.data.astype(np.float64)
    if training and model.rho > 0:
        X = _dropout(X, model.rho, rng if rng is not None else model.rng)
    return softmax_rows(X @ model.W.T + model.b[None, :])


def ce_loss_and_grads(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy of the linear head and its analytic gradient."""
    Z = X @ W.T + b[None, :]
    Z = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1))
    n = X.shape[0]
    loss = float(np.mean(logsum - Z[np.arange(n), y]))
    P = np.exp(Z - logsum[:, None])
    dZ = P
    dZ[np.arange(n), y] -= 1.0
    dZ /= n
    return loss, dZ.T @ X, dZ.sum(axis=0)


class _AdamW:
    """Bias-corrected adaptive update with decay decoupled from the gradient."""

    def __init__(self, cfg: TrainConfig, W: np.ndarray, b: np.ndarray) -> None:
        self.cfg = cfg
        self.mW, self.vW = np.zeros_like(W), np.zeros_like(W)
        self.mb, self.vb = np.zeros_like(b), np.zeros_like(b)
        self.t = 0

    def step(self, model: StudentModel, gW: np.ndarray, gb: np.ndarray) -> None:
        c = self.cfg
        self.t += 1
        self.mW = c.beta1 * self.mW + (1 - c.beta1) * gW
        self.vW = c.beta2 * self.vW + (1 - c.beta2) * gW**2
        self.mb = c.beta1 * self.mb + (1 - c.beta1) * gb
        self.vb = c.beta2 * self.vb + (1 - c.beta2) * gb**2
        bc1 = 1 - c.beta1**self.t
        bc2 = 1 - c.beta2**self.t
        model.W -= c.lr * (self.mW / bc1) / (np.sqrt(self.vW / bc2) + c.eps)
        model.b -= c.lr * (self.mb / bc1) / (np.sqrt(self.vb / bc2) + c.eps)
        # Decay acts on the weights only, never the bias.
        model.W -= c.lr * c.weight_decay * model.W


def accuracy(posteriors: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(posteriors.argmax(axis=1) == np.asarray(labels)))


def train_epochs(
    feats: EmbeddingTable,
    labels: np.ndarray,
    n_classes: int,
    val_feats: EmbeddingTable | None,
    val_labels: np.ndarray | None,
    cfg: TrainConfig,
    rho: float = 0.75,
) -> tuple[StudentModel, list[float]]:
    """Full training loop; returns the selected model and per-epoch mean loss.

    The returned parameters are the epoch snapshot with the highest validation
    accuracy (earliest epoch on ties); with no validation set the final-epoch
    parameters are returned.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if feats.n != labels.size:
        raise ValueError("labels length does not match feature rows")
    if feats.n < 1:
        raise ValueError("training set is empty")
    X = feats.data.astype(np.float64)
    n = X.shape[0]

    model = init_student(n_classes, feats.d, cfg.seed, rho=rho)
    opt = _AdamW(cfg, model.W, model.b)
    shuffle_rng = make_rng(cfg.seed, _SALT_TRAIN, 1)
    mask_rng = make_rng(cfg.seed, _SALT_TRAIN, 2)
    batch = min(cfg.batch_size, n)

    has_val = val_feats is not None and val_labels is not None and val_feats.n > 0
    best_acc, best_W, best_b = -1.0, None, None
    history: list[float] = []

    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            Xb = X[idx]
            if rho > 0:
                Xb = _dropout(Xb, rho, mask_rng)
            loss, gW, gb = ce_loss_and_grads(model.W, model.b, Xb, labels[idx])
            opt.step(model, gW, gb)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if has_val:
            acc = accuracy(forward(model, val_feats), val_labels)
            if acc > best_acc:
                best_acc, best_W, best_b = acc, model.W.copy(), model.b.copy()

    if has_val and best_W is not None:
        model.W, model.b = best_W, best_b
    return model, history


def train_student(
    feats: EmbeddingTable,
    labels: np.ndarray,
    n_classes: int,
    val_feats: EmbeddingTable | None,
    val_labels: np.ndarray | None,
    cfg: TrainConfig,
    rho: float = 0.75,
) -> StudentModel:
    model, _ = train_epochs(feats, labels, n_classes, val_feats, val_labels, cfg, rho=rho)
    return model


def grad_embedding(model: StudentModel, feats: EmbeddingTable) -> np.ndarray:
    """Last-layer cross-entropy gradient at the pseudo-label, one flat row per sample.

    Row i flattens (p_i - onehot(argmax p_i)) outer x_i, so confident samples
    shrink toward zero and the row norm is ||p - onehot|| * ||x||.
    """
    P = forward(model, feats)
    X = feats.data.astype(np.float64)
    G = P.copy()
    G[np.arange(P.shape[0]), P.argmax(axis=1)] -= 1.0
    return np.einsum("nc,nd->ncd", G, X).reshape(P.shape[0], -1)


def mc_dropout_posteriors(
    model: StudentModel, feats: EmbeddingTable, K: int, seed: int
) -> np.ndarray:
    """K stochastic forward passes with independent masks, shape (K, n, C)."""
    if model.rho <= 0:
        raise ValueError("MC dropout requires dropout (rho > 0)")
    if K < 2:
        raise ValueError("need K >= 2 passes")
    rng = make_rng(seed, _SALT_MC)
    return np.stack([forward(model, feats, training=True, rng=rng) for _ in range(K)])
