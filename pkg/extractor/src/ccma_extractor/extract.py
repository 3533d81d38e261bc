"""Extraction jobs: frozen-encoder features and prompt-averaged prototypes.

One job covers a dataset's splits with a teacher and a student encoder and
writes the cache files the engine consumes directly:

    train_student.embc  train_teacher.embc  test_student.embc
    test_teacher.embc   prototypes.embc     class_names.txt   bundle.json

Teacher image features and prototypes are l2-normalized; student features
are stored raw. Corrupt images are skipped and logged by index.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import CorruptImage, load_dataset, resolve_class_names
from .embc import l2_normalize_rows, write_class_names, write_embc
from .encoders import load_encoder

log = logging.getLogger(__name__)

DEFAULT_TEMPLATES = (
    "a photo of a {class}",
    "a photo of the {class}",
    "a blurry photo of a {class}",
    "a photo of one {class}",
    "a close-up photo of a {class}",
    "a rendition of a {class}",
    "a bright photo of a {class}",
    "a low resolution photo of a {class}",
    "a cropped photo of a {class}",
    "a clean photo of a {class}",
)


@dataclass
class ExtractionJob:
    dataset: str
    teacher: str
    student: str
    out_dir: str | Path
    splits: tuple[str, ...] = ("train", "test")
    templates: tuple[str, ...] = DEFAULT_TEMPLATES
    data_root: str | Path = "."
    download: bool = False
    class_name_file: str | Path | None = None
    batch_size: int = 64

    def __post_init__(self) -> None:
        if not self.templates:
            raise ValueError("template list is empty")
        for t in self.templates:
            if "{class}" not in t:
                raise ValueError(f"template {t!r} lacks the {{class}} placeholder")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.splits:
            raise ValueError("need at least one split")


@dataclass
class ExtractionReport:
    files: dict[str, str] = field(default_factory=dict)
    skipped: dict[str, list[int]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    encoder_fingerprints: dict[str, str] = field(default_factory=dict)
    class_names: list[str] = field(default_factory=list)


def _encode_split(dataset, encoder, batch_size: int):
    """All features for one (split, encoder) pass; returns feats, labels, skipped."""
    feats, labels, skipped = [], [], []
    batch_imgs, batch_labels = [], []

    def flush():
        if batch_imgs:
            feats.append(encoder.encode_images(batch_imgs))
            labels.extend(batch_labels)
            batch_imgs.clear()
            batch_labels.clear()

    for i in range(len(dataset)):
        try:
            sample = dataset.get(i)
        except CorruptImage as exc:
            log.warning("skipping corrupt image %d: %s", i, exc)
            skipped.append(i)
            continue
        batch_imgs.append(sample.image)
        batch_labels.append(sample.label)
        if len(batch_imgs) >= batch_size:
            flush()
    flush()
    if not feats:
        raise ValueError("no readable images in dataset")
    return np.concatenate(feats), np.asarray(labels, dtype=np.int32), skipped


def extract_image_features(job: ExtractionJob) -> ExtractionReport:
    """Write one labeled EMBC file per (split, encoder)."""
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    teacher = load_encoder(job.teacher)
    student = load_encoder(job.student)
    report = ExtractionReport(
        encoder_fingerprints={"teacher": teacher.fingerprint(), "student": student.fingerprint()}
    )

    for split in job.splits:
        dataset = load_dataset(job.dataset, split, job.data_root, download=job.download)
        if not report.class_names:
            report.class_names = resolve_class_names(dataset, job.class_name_file)
        for role, encoder in (("student", student), ("teacher", teacher)):
            feats, labels, skipped = _encode_split(dataset, encoder, job.batch_size)
            normalized = role == "teacher"
            if normalized:
                feats = l2_normalize_rows(feats).astype(np.float32)
            path = out / f"{split}_{role}.embc"
            write_embc(path, feats, labels, normalized=normalized)
            key = f"{split}_{role}"
            report.files[key] = str(path)
            report.counts[key] = int(feats.shape[0])
            if skipped:
                report.skipped[key] = skipped
    return report


def extract_text_prototypes(job: ExtractionJob, class_names: list[str] | None = None) -> ExtractionReport:
    """Prompt-averaged class prototypes plus the class-name file.

    Per class: encode every filled template, l2-normalize each embedding,
    average them, and l2-normalize the mean.
    """
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    teacher = load_encoder(job.teacher)
    if class_names is None:
        dataset = load_dataset(job.dataset, job.splits[0], job.data_root, download=job.download)
        class_names = resolve_class_names(dataset, job.class_name_file)

    rows = []
    for name in class_names:
        prompts = [t.replace("{class}", name) for t in job.templates]
        emb = l2_normalize_rows(teacher.encode_texts(prompts))
        rows.append(l2_normalize_rows(emb.mean(axis=0, keepdims=True))[0])
    protos = np.asarray(rows, dtype=np.float32)

    proto_path = out / "prototypes.embc"
    names_path = out / "class_names.txt"
    write_embc(proto_path, protos, None, normalized=True)
    write_class_names(class_names, names_path)
    report = ExtractionReport(
        files={"prototypes": str(proto_path), "class_names": str(names_path)},
        counts={"prototypes": len(class_names)},
        encoder_fingerprints={"teacher": teacher.fingerprint()},
        class_names=list(class_names),
    )
    return report


def run_job(job: ExtractionJob) -> dict:
    """Full extraction: image features, prototypes, bundle manifest."""
    image_report = extract_image_features(job)
    proto_report = extract_text_prototypes(job, class_names=image_report.class_names)
    out = Path(job.out_dir)
    caches = {
        "train_student": image_report.files.get("train_student"),
        "train_teacher": image_report.files.get("train_teacher"),
        "test_student": image_report.files.get("test_student"),
        "test_teacher": image_report.files.get("test_teacher"),
        "prototypes": proto_report.files["prototypes"],
        "class_names": proto_report.files["class_names"],
    }
    manifest = {
        "dataset": job.dataset,
        "splits": list(job.splits),
        "teacher": job.teacher,
        "student": job.student,
        "templates": list(job.templates),
        "caches": caches,
        "counts": {**image_report.counts, **proto_report.counts},
        "skipped": image_report.skipped,
        "checkpoint_fingerprints": image_report.encoder_fingerprints,
    }
    (out / "bundle.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest
