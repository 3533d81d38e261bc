"""Dataset loaders yielding (image, label) pairs and class names.

Two source kinds:

    folder:<path>    class-per-subdirectory layout; labels follow the sorted
                     subdirectory order, names are normalized directory names
    cifar100 / food101 / caltech101 / caltech256
                     torchvision catalogs (class names come with the dataset)

Custom class names can be supplied as a text file (one per line, label
order); the loader errors listing any labels it cannot resolve.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}

TORCHVISION_DATASETS = ("cifar100", "food101", "caltech101", "caltech256")


@dataclass
class Sample:
    image: Image.Image
    label: int


class CorruptImage(Exception):
    pass


def normalize_label(raw: str) -> str:
    """Directory-style label to a prompt-friendly name."""
    name = re.sub(r"[_\-]+", " ", raw).strip().lower()
    return re.sub(r"\s+", " ", name)


class FolderDataset:
    def __init__(self, root: str | Path, split: str = "train") -> None:
        base = Path(root)
        split_dir = base / split if (base / split).is_dir() else base
        class_dirs = sorted(p for p in split_dir.iterdir() if p.is_dir())
        if not class_dirs:
            raise ValueError(f"no class subdirectories under {split_dir}")
        self.class_names = [normalize_label(p.name) for p in class_dirs]
        self._files: list[tuple[Path, int]] = []
        for label, cdir in enumerate(class_dirs):
            for f in sorted(cdir.iterdir()):
                if f.suffix.lower() in IMAGE_SUFFIXES:
                    self._files.append((f, label))

    def __len__(self) -> int:
        return len(self._files)

    def get(self, i: int) -> Sample:
        path, label = self._files[i]
        try:
            with Image.open(path) as img:
                return Sample(img.convert("RGB"), label)
        except Exception as exc:
            raise CorruptImage(f"{path}: {exc}") from exc


class TorchvisionDataset:
    def __init__(self, name: str, split: str, data_root: str | Path, download: bool = False) -> None:
        import torchvision.datasets as tvd

        train = split == "train"
        root = str(data_root)
        if name == "cifar100":
            self._ds = tvd.CIFAR100(root, train=train, download=download)
        elif name == "food101":
            self._ds = tvd.Food101(root, split="train" if train else "test", download=download)
        elif name == "caltech101":
            self._ds = tvd.Caltech101(root, download=download)
        elif name == "caltech256":
            self._ds = tvd.Caltech256(root, download=download)
        else:
            raise ValueError(f"unknown torchvision dataset {name!r}")
        raw = [str(c) for c in getattr(self._ds, "classes", [])]
        if not raw:
            raise ValueError(f"dataset {name!r} does not expose class names")
        self.class_names = [normalize_label(c) for c in raw]

    def __len__(self) -> int:
        return len(self._ds)

    def get(self, i: int) -> Sample:
        try:
            img, label = self._ds[i]
        except Exception as exc:
            raise CorruptImage(f"index {i}: {exc}") from exc
        return Sample(img.convert("RGB"), int(label))


def load_dataset(name: str, split: str, data_root: str | Path = ".", download: bool = False):
    if name.startswith("folder:"):
        return FolderDataset(name.removeprefix("folder:"), split)
    if name in TORCHVISION_DATASETS:
        return TorchvisionDataset(name, split, data_root, download=download)
    raise ValueError(f"unknown dataset {name!r}; use folder:<path> or one of {TORCHVISION_DATASETS}")


def resolve_class_names(dataset, override_file: str | Path | None) -> list[str]:
    """Class names for prompts, optionally overridden from a text file."""
    names = list(dataset.class_names)
    if override_file is None:
        return names
    lines = [ln.strip() for ln in Path(override_file).read_text(encoding="utf-8").splitlines()]
    override = [ln for ln in lines if ln]
    if len(override) != len(names):
        missing = names[len(override):] if len(override) < len(names) else []
        raise ValueError(
            f"class-name file has {len(override)} entries for {len(names)} classes"
            + (f"; unresolved: {missing}" if missing else "")
        )
    return override
