"""Face embedding providers and the cosine comparator.

Two provider kinds exist. ``synthetic`` providers derive a vector from a hash
of the image bytes and need no model; ``model_file`` providers run an ONNX
network through ``onnxruntime``, which is an optional dependency.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from msdmad.errors import (
    ConfigError,
    DimensionMismatch,
    ImageTooSmall,
    ModelLoadError,
    ZeroVector,
)
from msdmad.protocol import SpectralBand

MODEL_INPUT_SIZE = 112
KINDS = ("model_file", "synthetic")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def normalized(cls, values) -> "EmbeddingVector":
        v = np.asarray(values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding has non-finite entries")
        n = np.linalg.norm(v)
        if n == 0.0:
            raise ZeroVector("cannot normalise a zero embedding")
        return cls(v / n)


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)


@dataclass(frozen=True)
class ProviderDescriptor:
    name: str
    dimension: int
    kind: str = "synthetic"
    model_path: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"provider {self.name!r}: kind must be one of {KINDS}")
        if self.dimension <= 0:
            raise ConfigError(f"provider {self.name!r}: dimension must be positive")
        if self.kind == "model_file" and not self.model_path:
            raise ConfigError(f"provider {self.name!r}: model_file kind needs model_path")
        if self.kind == "synthetic" and self.seed is None:
            raise ConfigError(f"provider {self.name!r}: synthetic kind needs seed")


class SyntheticProvider:
    """Hash-seeded stand-in: identical image bytes give identical vectors."""

    concurrent = True

    def __init__(self, descriptor: ProviderDescriptor):
        self.descriptor = descriptor

    def embed(self, img: np.ndarray) -> EmbeddingVector:
        arr = np.ascontiguousarray(img)
        h = hashlib.sha256()
        h.update(f"{self.descriptor.seed}|{arr.dtype.str}|{arr.shape}|".encode())
        h.update(arr.tobytes())
        rng = np.random.default_rng(int.from_bytes(h.digest()[:16], "little"))
        return EmbeddingVector.normalized(rng.standard_normal(self.descriptor.dimension))


class OnnxProvider:
    """Runs an NCHW 1x3x112x112 float network and returns its 1xD output."""

    concurrent = False

    def __init__(self, descriptor: ProviderDescriptor):
        self.descriptor = descriptor
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise ModelLoadError(
                "model_file providers need the optional 'onnxruntime' package"
            ) from exc
        if not Path(descriptor.model_path).is_file():
            raise ModelLoadError(f"model file not found: {descriptor.model_path}")
        try:
            self._session = ort.InferenceSession(descriptor.model_path)
        except Exception as exc:  # onnxruntime raises its own exception types
            raise ModelLoadError(f"{descriptor.model_path}: {exc}") from exc
        self._input = self._session.get_inputs()[0].name
        self._lock = threading.Lock()

    def embed(self, img: np.ndarray) -> EmbeddingVector:
        arr = np.asarray(img)
        if arr.shape[0] < MODEL_INPUT_SIZE or arr.shape[1] < MODEL_INPUT_SIZE:
            raise ImageTooSmall(
                f"image {arr.shape[1]}x{arr.shape[0]} below {MODEL_INPUT_SIZE}x{MODEL_INPUT_SIZE}"
            )
        from PIL import Image

        if arr.ndim == 2:
            arr = np.repeat(arr[..., None], 3, axis=2)
        resized = Image.fromarray(arr.astype(np.uint8)).resize(
            (MODEL_INPUT_SIZE, MODEL_INPUT_SIZE), Image.BILINEAR
        )
        x = (np.asarray(resized, dtype=np.float32) - 127.5) / 128.0
        x = np.transpose(x, (2, 0, 1))[None]
        with self._lock:
            out = self._session.run(None, {self._input: x})[0]
        out = np.asarray(out, dtype=np.float64).ravel()
        if out.shape[0] != self.descriptor.dimension:
            raise DimensionMismatch(
                f"model produced {out.shape[0]} values, provider declares {self.descriptor.dimension}"
            )
        return EmbeddingVector.normalized(out)


@lru_cache(maxsize=None)
def load_provider(descriptor: ProviderDescriptor):
    if descriptor.kind == "synthetic":
        return SyntheticProvider(descriptor)
    return OnnxProvider(descriptor)


def embed(provider: ProviderDescriptor, img: np.ndarray) -> EmbeddingVector:
    return load_provider(provider).embed(img)


def cosine_similarity(a, b) -> float:
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dimensions differ: {va.shape} vs {vb.shape}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def _key_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:16], "little")


def subject_base(seed: int, subject_id: str, dimension: int) -> np.ndarray:
    rng = np.random.default_rng(_key_seed("subject", seed, subject_id))
    v = rng.standard_normal(dimension)
    return v / np.linalg.norm(v)


@lru_cache(maxsize=64)
def band_rotation(seed: int, band: Optional[SpectralBand], dimension: int, angle: float) -> np.ndarray:
    """Orthogonal matrix for a band (Cayley transform of a seeded skew matrix).

    ``angle`` sets the spectral norm of the skew generator, so it bounds how
    far the rotation moves any unit vector. ``band=None`` is the identity.
    """
    if band is None or angle == 0.0:
        return np.eye(dimension)
    rng = np.random.default_rng(_key_seed("band", seed, band.value, dimension))
    g = rng.standard_normal((dimension, dimension))
    skew = g - g.T
    skew *= np.tan(angle / 2.0) / np.linalg.norm(skew, 2)
    eye = np.eye(dimension)
    q = np.linalg.solve(eye - skew, eye + skew)
    q.setflags(write=False)
    return q


@lru_cache(maxsize=64)
def band_direction(seed: int, band: Optional[SpectralBand], dimension: int) -> np.ndarray:
    """Seeded unit vector giving a capture modality's systematic offset."""
    key = band.value if band is not None else "visible"
    rng = np.random.default_rng(_key_seed("shift", seed, key, dimension))
    v = rng.standard_normal(dimension)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def synthetic_subject_embedding(
    seed: int,
    subject_id: str,
    band: Optional[SpectralBand],
    noise_scale: float,
    dimension: int = 128,
    sample_index: int = 0,
    band_angle: float = 0.25,
    band_shift: float = 0.0,
) -> EmbeddingVector:
    """Seeded embedding of one capture of a subject in a spectral band.

    The subject's base direction is rotated into the band's space, optionally
    offset by ``band_shift`` along the band's fixed direction, perturbed by
    isotropic Gaussian noise with per-component standard deviation
    ``noise_scale`` and re-normalised. ``sample_index`` selects an
    independent noise draw, so captures are reproducible one by one.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    u = subject_base(seed, subject_id, dimension)
    v = band_rotation(seed, band, dimension, band_angle) @ u
    if band_shift:
        v = v + band_shift * band_direction(seed, band, dimension)
    if noise_scale > 0:
        band_key = band.value if band is not None else "visible"
        rng = np.random.default_rng(_key_seed("noise", seed, subject_id, band_key, sample_index))
        v = v + rng.standard_normal(dimension) * noise_scale
    return EmbeddingVector.normalized(v)
