"""Seeded stand-in corpus: per-subject, per-band embeddings and morph references.

Each subject has a base unit vector. Bona fide references are the base
itself (visible enrolment), trusted captures are band-rotated, band-shifted
and noisy copies, and a morph reference is the SLERP midpoint of its two
parents plus noise. Six "networks" view every vector through their own fixed
orthogonal map with a little independent noise.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from msdmad.embeddings import subject_base, synthetic_subject_embedding
from msdmad.errors import ConfigError
from msdmad.features import slerp
from msdmad.protocol import (
    Label,
    ProtocolSplit,
    SessionId,
    Side,
    SpectralBand,
    enumerate_morph_pairs,
    make_disjoint_split,
)
from msdmad.store import EmbeddingStore, StoreSample

DEFAULT_BAND_NOISE = {
    SpectralBand.B650: 0.05,
    SpectralBand.B710: 0.10,
    SpectralBand.B770: 0.15,
    SpectralBand.B830: 0.20,
    SpectralBand.B890: 0.25,
    SpectralBand.B950: 0.30,
    SpectralBand.WL: 0.20,
}
DEFAULT_TRAIN_FRACTION = 78 / 143


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 60
    dimension: int = 128
    band_noise: dict = field(default_factory=lambda: dict(DEFAULT_BAND_NOISE))
    morph_noise: float = 0.15
    trusted_per_subject: int = 5
    seed: int = 0
    visible_noise: float = 0.15
    include_visible: bool = True
    band_angle: float = 0.25
    band_shift: float = 1.0
    n_networks: int = 6
    network_noise: float = 0.02
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    max_morph_pairs_train: Optional[int] = None
    max_morph_pairs_test: Optional[int] = None

    def validate(self) -> None:
        if self.n_subjects < 4:
            raise ConfigError(f"n_subjects must be at least 4, got {self.n_subjects}")
        if self.dimension < 2 or self.trusted_per_subject < 1 or self.n_networks < 1:
            raise ConfigError("dimension >= 2, trusted_per_subject >= 1 and n_networks >= 1 required")
        unknown = set(self.band_noise) - set(SpectralBand)
        if unknown or set(self.band_noise) != set(SpectralBand):
            raise ConfigError("band_noise needs one value for each of the seven bands")
        scales = [*self.band_noise.values(), self.morph_noise, self.visible_noise, self.network_noise]
        if any(s < 0 for s in scales) or self.band_shift < 0 or self.band_angle < 0:
            raise ConfigError("noise scales, band_shift and band_angle must be non-negative")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["band_noise"] = {b.value: v for b, v in self.band_noise.items()}
        return doc


def _seed_of(*parts) -> int:
    return int.from_bytes(hashlib.sha256("|".join(map(str, parts)).encode()).digest()[:16], "little")


def network_map(seed: int, network: int, dimension: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(_seed_of("network", seed, network)).standard_normal((dimension, dimension)))
    return q * np.sign(np.diag(r))


def subject_ids(n: int) -> list[str]:
    return [f"S{i:03d}" for i in range(n)]


def morph_embedding(seed: int, a: str, b: str, dimension: int, noise: float) -> np.ndarray:
    v = slerp(subject_base(seed, a, dimension), subject_base(seed, b, dimension), 0.5)
    if noise > 0:
        v = v + np.random.default_rng(_seed_of("morph", seed, a, b)).standard_normal(dimension) * noise
    return v / np.linalg.norm(v)


def generate_synthetic_corpus(config: SynthConfig = SynthConfig()) -> tuple[EmbeddingStore, ProtocolSplit]:
    config.validate()
    seed, dim = config.seed, config.dimension
    subjects = subject_ids(config.n_subjects)
    split = make_disjoint_split(subjects, config.train_fraction, seed)

    samples: list[StoreSample] = []
    base: list[np.ndarray] = []
    for s in subjects:
        samples.append(StoreSample(f"{s}/ref", s, "reference", SessionId.SESSION1, Label.BONA_FIDE))
        base.append(subject_base(seed, s, dim))
    caps = {Side.TRAIN: config.max_morph_pairs_train, Side.TEST: config.max_morph_pairs_test}
    for side in (Side.TRAIN, Side.TEST):
        for a, b in enumerate_morph_pairs(split, side, caps[side], seed):
            samples.append(
                StoreSample(f"morph_{a}_{b}", f"morph_{a}_{b}", "reference", SessionId.SESSION1, Label.MORPH, morph_parents=(a, b))
            )
            base.append(morph_embedding(seed, a, b, dim, config.morph_noise))
    for s in subjects:
        for band in SpectralBand:
            for i in range(config.trusted_per_subject):
                samples.append(
                    StoreSample(f"{s}/{band.value}/{i}", s, "trusted", SessionId.MULTISPECTRAL, Label.BONA_FIDE, band, sample_index=i)
                )
                base.append(
                    synthetic_subject_embedding(
                        seed, s, band, config.band_noise[band], dim, i, config.band_angle, config.band_shift
                    ).values
                )
        if config.include_visible:
            for i in range(config.trusted_per_subject):
                samples.append(StoreSample(f"{s}/VIS/{i}", s, "trusted", SessionId.SESSION2, Label.BONA_FIDE, sample_index=i))
                base.append(
                    synthetic_subject_embedding(
                        seed, s, None, config.visible_noise, dim, i, config.band_angle, config.band_shift
                    ).values
                )

    stacked = np.vstack(base)
    networks = [f"net{j}" for j in range(config.n_networks)]
    vectors = {}
    for j, net in enumerate(networks):
        view = stacked @ network_map(seed, j, dim).T
        if config.network_noise > 0:
            view = view + np.random.default_rng(_seed_of("netnoise", seed, j)).standard_normal(view.shape) * config.network_noise
        vectors[net] = view / np.linalg.norm(view, axis=1, keepdims=True)
    meta = {"source": "synthetic", "config": config.to_dict()}
    return EmbeddingStore(dim, networks, samples, vectors, split, meta), split
