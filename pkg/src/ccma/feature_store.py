"""Embedding caches, dataset bundles, pool bookkeeping, and synthetic data.

The on-disk cache is a small self-describing binary ("EMBC", little-endian):

    magic "EMBC" | version u32 | n u64 | d u32 | flags u32 | n*d float32 rows
    | n int32 labels (only when flags bit 0 is set)

flags: bit 0 = labels appended, bit 1 = rows are l2-normalized.
Class names travel in a separate UTF-8 text file, one name per line, next to
a prototype cache whose n equals the class count.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

EMBC_MAGIC = b"EMBC"
EMBC_VERSION = 1
FLAG_HAS_LABELS = 1
FLAG_NORMALIZED = 2

_HEADER = struct.Struct("<4sIQII")

# Salt tags for independent random streams.
_SALT_POOL = 101


class CacheFormatError(ValueError):
    """Base class for malformed EMBC files."""


class BadMagicError(CacheFormatError):
    pass


class UnsupportedVersionError(CacheFormatError):
    pass


class TruncatedPayloadError(CacheFormatError):
    pass


class InvalidPayloadError(CacheFormatError):
    """Payload decodes but contains non-finite values."""


@dataclass
class EmbeddingTable:
    """Dense n-by-d float32 feature matrix.

    ``normalized`` asserts that every row has unit Euclidean norm; it is
    validated on construction so downstream code can trust the flag.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"expected 2-D table, got shape {self.data.shape}")
        n, d = self.data.shape
        if n < 1 or d < 1:
            raise ValueError(f"empty table: n={n}, d={d}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("table contains NaN or Inf")
        if self.normalized:
            norms = np.linalg.norm(self.data.astype(np.float64), axis=1)
            worst = float(np.max(np.abs(norms - 1.0)))
            if worst > 1e-5:
                raise ValueError(f"normalized flag set but max |row norm - 1| = {worst:.2e}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def take(self, indices: np.ndarray) -> "EmbeddingTable":
        """Row subset preserving the normalization flag."""
        return EmbeddingTable(self.data[np.asarray(indices, dtype=np.int64)], self.normalized)


@dataclass
class PrototypeTable:
    """One reference vector per class, C-by-d."""

    rows: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2 or self.rows.shape[0] < 2:
            raise ValueError(f"prototype table needs >= 2 rows, got shape {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("prototype table contains NaN or Inf")
        if self.normalized:
            norms = np.linalg.norm(self.rows.astype(np.float64), axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-5:
                raise ValueError("normalized flag set but prototype rows are not unit norm")

    @property
    def C(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


def validate_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Coerce labels to int32 in [0, n_classes) or raise."""
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    if labels.ndim != 1:
        raise ValueError("labels must be 1-D")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    return labels


@dataclass
class DatasetBundle:
    """Everything one experiment consumes: features, labels, prototypes, names."""

    train_student: EmbeddingTable
    train_teacher: EmbeddingTable
    test_student: EmbeddingTable
    test_teacher: EmbeddingTable
    train_labels: np.ndarray
    test_labels: np.ndarray
    prototypes: PrototypeTable
    class_names: list[str]

    def __post_init__(self) -> None:
        C = self.prototypes.C
        if len(self.class_names) != C:
            raise ValueError(f"{len(self.class_names)} class names for {C} prototypes")
        self.train_labels = validate_labels(self.train_labels, C)
        self.test_labels = validate_labels(self.test_labels, C)
        if self.train_student.n != self.train_teacher.n or self.train_student.n != len(self.train_labels):
            raise ValueError("train tables and labels disagree on n")
        if self.test_student.n != self.test_teacher.n or self.test_student.n != len(self.test_labels):
            raise ValueError("test tables and labels disagree on n")
        seen = int(max(self.train_labels.max(), self.test_labels.max())) + 1
        if seen != C:
            raise ValueError(f"labels cover {seen} classes but bundle declares {C}")

    @property
    def n_classes(self) -> int:
        return self.prototypes.C

    @property
    def n_train(self) -> int:
        return self.train_student.n


@dataclass
class SyntheticSpec:
    """Parameters of the Gaussian-mixture stand-in for real encoder features."""

    C: int = 10
    n_train: int = 2000
    n_test: int = 1000
    d_student: int = 32
    d_teacher: int = 16
    class_separation: float = 4.0
    teacher_noise: float = 0.0
    student_noise: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("C", "n_train", "n_test", "d_student", "d_teacher"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.C < 2:
            raise ValueError("need at least 2 classes")
        if not (self.class_separation > 0 and math.isfinite(self.class_separation)):
            raise ValueError("class_separation must be positive and finite")
        for name in ("teacher_noise", "student_noise"):
            v = float(getattr(self, name))
            if v < 0 or not math.isfinite(v):
                raise ValueError(f"{name} must be finite and >= 0")


class PoolState:
    """Partition of train indices into labeled / unlabeled / calibration.

    The only mutable object in the engine; the harness advances it between
    rounds via :meth:`acquire`.
    """

    def __init__(
        self,
        labeled: np.ndarray,
        unlabeled: np.ndarray,
        calibration: np.ndarray,
        n_train: int,
        round: int = 0,
    ) -> None:
        self.labeled = np.asarray(labeled, dtype=np.int64)
        self.unlabeled = np.asarray(unlabeled, dtype=np.int64)
        self.calibration = np.asarray(calibration, dtype=np.int64)
        self.n_train = int(n_train)
        self.round = int(round)
        self.check_partition()

    def check_partition(self) -> None:
        parts = [self.labeled, self.unlabeled, self.calibration]
        total = sum(p.size for p in parts)
        union = np.unique(np.concatenate(parts)) if total else np.empty(0, dtype=np.int64)
        if union.size != total:
            raise ValueError("pool subsets overlap")
        if total and (union.min() < 0 or union.max() >= self.n_train):
            raise ValueError("pool indices outside [0, n_train)")

    @property
    def n_purchased(self) -> int:
        """Number of indices whose labels have been bought (labeled + calibration)."""
        return self.labeled.size + self.calibration.size

    def acquire(self, batch: np.ndarray, n_cal: int = 0) -> None:
        """Move ``batch`` out of the unlabeled pool, diverting its tail to calibration."""
        batch = np.asarray(batch, dtype=np.int64)
        if batch.size != np.unique(batch).size:
            raise ValueError("batch contains duplicates")
        if not np.isin(batch, self.unlabeled).all():
            raise ValueError("batch contains indices outside the unlabeled pool")
        n_cal = min(int(n_cal), batch.size)
        keep = batch[: batch.size - n_cal]
        divert = batch[batch.size - n_cal :]
        self.labeled = np.sort(np.concatenate([self.labeled, keep]))
        self.calibration = np.sort(np.concatenate([self.calibration, divert]))
        mask = ~np.isin(self.unlabeled, batch)
        self.unlabeled = self.unlabeled[mask]
        self.round += 1
        self.check_partition()


def save_cache(table: EmbeddingTable, labels: np.ndarray | None, path: str | Path) -> None:
    """Write ``table`` (and optional labels) to ``path`` in EMBC format."""
    n, d = table.data.shape
    if d > 0xFFFFFFFF:
        raise ValueError(f"d={d} overflows the u32 header field")
    flags = 0
    if labels is not None:
        flags |= FLAG_HAS_LABELS
    if table.normalized:
        flags |= FLAG_NORMALIZED
    header = _HEADER.pack(EMBC_MAGIC, EMBC_VERSION, n, d, flags)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table.data.astype("<f4", copy=False).tobytes(order="C"))
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype="<i4")
            if labels.shape != (n,):
                raise ValueError(f"labels shape {labels.shape} does not match n={n}")
            fh.write(labels.tobytes())


def load_cache(path: str | Path) -> tuple[EmbeddingTable, np.ndarray | None]:
    """Read an EMBC file back into memory, validating structure and payload."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        if raw[:4] != EMBC_MAGIC:
            raise BadMagicError(f"{path}: not an EMBC file")
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    magic, version, n, d, flags = _HEADER.unpack_from(raw)
    if magic != EMBC_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != EMBC_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    body = n * d * 4
    expected = _HEADER.size + body + (n * 4 if flags & FLAG_HAS_LABELS else 0)
    if len(raw) < expected:
        raise TruncatedPayloadError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d)
    if not np.all(np.isfinite(data)):
        raise InvalidPayloadError(f"{path}: payload contains NaN or Inf")
    labels = None
    if flags & FLAG_HAS_LABELS:
        labels = np.frombuffer(raw, dtype="<i4", count=n, offset=_HEADER.size + body).copy()
    table = EmbeddingTable(data.copy(), normalized=bool(flags & FLAG_NORMALIZED))
    return table, labels


def save_class_names(names: list[str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{name}\n" for name in names), encoding="utf-8")


def load_class_names(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line for line in lines if line.strip()]


def l2_normalize_rows(arr: np.ndarray) -> np.ndarray:
    """Divide each row by its Euclidean norm, raising on (near-)zero rows."""
    arr = np.asarray(arr, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1)
    bad = np.where(norms < 1e-12)[0]
    if bad.size:
        raise ValueError(f"cannot normalize row {int(bad[0])}: norm {norms[bad[0]]:.3e}")
    return arr / norms[:, None]


def l2_normalize(table: EmbeddingTable) -> EmbeddingTable:
    """Return a copy of ``table`` with unit-norm rows and the flag set."""
    return EmbeddingTable(l2_normalize_rows(table.data), normalized=True)


def generate_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    """Deterministic Gaussian-mixture bundle standing in for frozen encoders.

    Class means sit on a sphere of radius ``class_separation`` in teacher
    space. Teacher features are normalized noisy copies of their class mean;
    student features are a fixed random linear image of the teacher features
    plus independent noise, so the two views correlate without agreeing.
    """
    rng = make_rng(spec.seed)
    C, dt, ds = spec.C, spec.d_teacher, spec.d_student

    means = rng.standard_normal((C, dt))
    means = spec.class_separation * l2_normalize_rows(means)
    protos = l2_normalize_rows(means + spec.teacher_noise * rng.standard_normal((C, dt)))

    # Balanced up to +/-1 per class by construction.
    train_labels = (np.arange(spec.n_train) % C).astype(np.int32)
    test_labels = (np.arange(spec.n_test) % C).astype(np.int32)

    teacher_train = l2_normalize_rows(means[train_labels] + rng.standard_normal((spec.n_train, dt)))
    teacher_test = l2_normalize_rows(means[test_labels] + rng.standard_normal((spec.n_test, dt)))

    proj = rng.standard_normal((dt, ds)) / math.sqrt(dt)
    student_train = teacher_train @ proj + spec.student_noise * rng.standard_normal((spec.n_train, ds))
    student_test = teacher_test @ proj + spec.student_noise * rng.standard_normal((spec.n_test, ds))

    names = [f"class_{i:03d}" for i in range(C)]
    return DatasetBundle(
        train_student=EmbeddingTable(student_train),
        train_teacher=EmbeddingTable(teacher_train, normalized=True),
        test_student=EmbeddingTable(student_test),
        test_teacher=EmbeddingTable(teacher_test, normalized=True),
        train_labels=train_labels,
        test_labels=test_labels,
        prototypes=PrototypeTable(protos, normalized=True),
        class_names=names,
    )


def init_pool(bundle: DatasetBundle, seed_size: int, cal_fraction: float, seed: int) -> PoolState:
    """Draw the initial labeled seed uniformly; calibration starts empty.

    ``cal_fraction`` of every later purchase is diverted to the calibration
    split by :meth:`PoolState.acquire`; the fraction itself lives in the
    experiment config, not here.
    """
    n = bundle.n_train
    if not 0 <= cal_fraction < 1:
        raise ValueError("cal_fraction must be in [0, 1)")
    if seed_size < 1 or seed_size > n:
        raise ValueError(f"seed_size {seed_size} outside [1, {n}]")
    rng = make_rng(seed, _SALT_POOL)
    perm = rng.permutation(n)
    labeled = np.sort(perm[:seed_size])
    unlabeled = np.sort(perm[seed_size:])
    return PoolState(labeled, unlabeled, np.empty(0, dtype=np.int64), n_train=n, round=0)
