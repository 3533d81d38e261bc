"""Writer for the EMBC cache format consumed by the ccma engine.

Layout (little-endian):

    "EMBC" | u32 version=1 | u64 n | u32 d | u32 flags | n*d float32 rows
    | n int32 labels (iff flags bit 0)

flags bit 0 = labels appended, bit 1 = rows are l2-normalized.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMBC"
VERSION = 1
FLAG_HAS_LABELS = 1
FLAG_NORMALIZED = 2

_HEADER = struct.Struct("<4sIQII")


def write_embc(
    path: str | Path,
    features: np.ndarray,
    labels: np.ndarray | None = None,
    normalized: bool = False,
) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain NaN or Inf")
    n, d = features.shape
    flags = 0
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype="<i4")
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} does not match n={n}")
        flags |= FLAG_HAS_LABELS
    if normalized:
        norms = np.linalg.norm(features.astype(np.float64), axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-5:
            raise ValueError("normalized flag requested but rows are not unit norm")
        flags |= FLAG_NORMALIZED
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d, flags))
        fh.write(features.tobytes(order="C"))
        if labels is not None:
            fh.write(labels.tobytes())


def write_class_names(names: list[str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names), encoding="utf-8")


def l2_normalize_rows(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        bad = int(np.argmin(norms))
        raise ValueError(f"cannot normalize row {bad}: norm {float(norms[bad, 0]):.3e}")
    return arr / norms
