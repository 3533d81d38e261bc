"""Encoder registry: deterministic fake encoders plus frozen HF backbones.

Identifiers:

    fake:<dim>[:<salt>]      hash-based features, no torch required; used by
                             the test suite and for offline pipeline checks
    hf-clip:<model_id>       transformers CLIPModel; provides image AND text
                             features (use as the teacher)
    hf-vision:<model_id>     transformers AutoModel vision backbone, pooled
                             output (use as the student)

Real encoders run frozen in eval mode under no_grad, so repeated extraction
of the same inputs is bit-identical.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image


def _bytes_fingerprint(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.hexdigest()


class FakeEncoder:
    """Deterministic stand-in encoder: features are a pure hash of the input."""

    def __init__(self, dim: int, salt: str = "0") -> None:
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.salt = salt
        self.name = f"fake:{dim}:{salt}"

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(self.salt.encode() + payload).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.Generator(np.random.PCG64(seed))
        return rng.standard_normal(self.dim).astype(np.float32)

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        out = np.empty((len(images), self.dim), dtype=np.float32)
        for i, img in enumerate(images):
            buf = io.BytesIO()
            img.convert("RGB").resize((16, 16)).save(buf, format="PNG")
            out[i] = self._vector(buf.getvalue())
        return out

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._vector(b"text:" + t.encode()) for t in texts])

    def fingerprint(self) -> str:
        return _bytes_fingerprint(self.name.encode())


class HFClipEncoder:
    """Frozen CLIP model from transformers; image and text towers."""

    def __init__(self, model_id: str) -> None:
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.dim = self.model.config.projection_dim
        self.name = f"hf-clip:{model_id}"

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        inputs = self.processor(images=[im.convert("RGB") for im in images], return_tensors="pt")
        with self._torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        inputs = self.processor(text=texts, return_tensors="pt", padding=True, truncation=True)
        with self._torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for key, tensor in sorted(self.model.state_dict().items()):
            h.update(key.encode())
            h.update(tensor.cpu().numpy().tobytes())
        return h.hexdigest()


class HFVisionEncoder:
    """Frozen image-only backbone from transformers (pooled output)."""

    def __init__(self, model_id: str) -> None:
        import torch
        from transformers import AutoImageProcessor, AutoModel

        self._torch = torch
        self.model = AutoModel.from_pretrained(model_id).eval()
        self.processor = AutoImageProcessor.from_pretrained(model_id)
        self.dim = self.model.config.hidden_size
        self.name = f"hf-vision:{model_id}"

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        inputs = self.processor(images=[im.convert("RGB") for im in images], return_tensors="pt")
        with self._torch.no_grad():
            out = self.model(**inputs)
        pooled = getattr(out, "pooler_output", None)
        if pooled is None:
            pooled = out.last_hidden_state[:, 0]
        return pooled.cpu().numpy().astype(np.float32)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for key, tensor in sorted(self.model.state_dict().items()):
            h.update(key.encode())
            h.update(tensor.cpu().numpy().tobytes())
        return h.hexdigest()


def load_encoder(identifier: str):
    """Instantiate an encoder from its identifier string."""
    kind, _, rest = identifier.partition(":")
    if kind == "fake":
        dim, _, salt = rest.partition(":")
        if not dim:
            raise ValueError("fake encoder needs a dimension, e.g. fake:64")
        return FakeEncoder(int(dim), salt or "0")
    if kind == "hf-clip":
        return HFClipEncoder(rest)
    if kind == "hf-vision":
        return HFVisionEncoder(rest)
    raise ValueError(f"unknown encoder identifier {identifier!r}")
