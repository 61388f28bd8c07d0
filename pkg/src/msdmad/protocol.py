"""Dataset vocabulary, manifest I/O and disjoint subject protocols."""

from __future__ import annotations

import enum
import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from msdmad.errors import EmptyInput, ParseError, ValidationError, VersionMismatch

MANIFEST_VERSION = 1


class SpectralBand(enum.Enum):
    """Trusted-capture spectral bands, in fusion order."""

    B650 = "B650"
    B710 = "B710"
    B770 = "B770"
    B830 = "B830"
    B890 = "B890"
    B950 = "B950"
    WL = "WL"

    @property
    def index(self) -> int:
        """1-based position in the fusion sum."""
        return list(SpectralBand).index(self) + 1

    @property
    def short(self) -> str:
        """Column suffix used in score tables (``650`` ... ``WL``)."""
        return self.value[1:] if self is not SpectralBand.WL else "WL"

    @classmethod
    def parse(cls, text: str) -> "SpectralBand":
        key = text.strip().upper()
        for band in cls:
            if key in (band.value, band.short, band.short + "NM"):
                return band
        raise ValueError(f"unknown spectral band {text!r}")


class SessionId(enum.Enum):
    SESSION1 = "Session1"
    SESSION2 = "Session2"
    MULTISPECTRAL = "Multispectral"


class Label(enum.Enum):
    BONA_FIDE = "BonaFide"
    MORPH = "Morph"

    @property
    def target(self) -> int:
        return int(self is Label.MORPH)


class Side(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class SampleRecord:
    subject_id: str
    session: SessionId
    label: Label
    image_path: str
    band: Optional[SpectralBand] = None
    morph_parents: Optional[tuple[str, str]] = None
    landmarks_path: Optional[str] = None

    def validate(self) -> None:
        where = f"sample {self.image_path!r}"
        if self.label is Label.MORPH:
            if self.morph_parents is None:
                raise ValidationError(f"{where}: morph record without morph_parents")
            a, b = self.morph_parents
            if a == b:
                raise ValidationError(f"{where}: morph parents must be distinct, got {a!r} twice")
        elif self.morph_parents is not None:
            raise ValidationError(f"{where}: morph_parents set on a bona fide record")
        if (self.band is not None) != (self.session is SessionId.MULTISPECTRAL):
            raise ValidationError(
                f"{where}: band must be present exactly when session is Multispectral"
            )


_FIELDS = (
    "subject_id",
    "session",
    "band",
    "label",
    "morph_parents",
    "image_path",
    "landmarks_path",
)
_REQUIRED = ("subject_id", "session", "label", "image_path")


@dataclass(frozen=True)
class DatasetManifest:
    samples: tuple[SampleRecord, ...]
    version: int = MANIFEST_VERSION
    counts: Counter = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        tally = Counter((s.session, s.band, s.label) for s in self.samples)
        object.__setattr__(self, "counts", tally)

    def label_counts(self) -> dict[Label, int]:
        out: Counter = Counter()
        for (_, _, label), n in self.counts.items():
            out[label] += n
        return dict(out)

    def validate(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            s.validate()
            if s.image_path in seen:
                raise ValidationError(f"sample {s.image_path!r}: duplicate image_path")
            seen.add(s.image_path)
        bona_subjects = {s.subject_id for s in self.samples if s.label is Label.BONA_FIDE}
        for s in self.samples:
            if s.morph_parents is None:
                continue
            for parent in s.morph_parents:
                if parent not in bona_subjects:
                    raise ValidationError(
                        f"sample {s.image_path!r}: morph parent {parent!r} has no bona fide sample"
                    )

    def subjects(self) -> set[str]:
        return {s.subject_id for s in self.samples if s.label is Label.BONA_FIDE}


def _record_from_dict(raw: object, pos: int) -> SampleRecord:
    if not isinstance(raw, dict):
        raise ParseError(f"samples[{pos}] is not an object")
    unknown = set(raw) - set(_FIELDS)
    if unknown:
        raise ParseError(f"samples[{pos}]: unknown keys {sorted(unknown)}")
    missing = [k for k in _REQUIRED if raw.get(k) is None]
    if missing:
        raise ParseError(f"samples[{pos}]: missing keys {missing}")
    try:
        parents = raw.get("morph_parents")
        if parents is not None:
            if not isinstance(parents, list) or len(parents) != 2:
                raise ValidationError(
                    f"sample {raw['image_path']!r}: morph_parents must be a pair"
                )
            parents = (str(parents[0]), str(parents[1]))
        band = raw.get("band")
        return SampleRecord(
            subject_id=str(raw["subject_id"]),
            session=SessionId(raw["session"]),
            label=Label(raw["label"]),
            image_path=str(raw["image_path"]),
            band=SpectralBand.parse(str(band)) if band is not None else None,
            morph_parents=parents,
            landmarks_path=raw.get("landmarks_path"),
        )
    except ValueError as exc:
        raise ParseError(f"samples[{pos}]: {exc}") from exc


def manifest_from_dict(doc: object) -> DatasetManifest:
    if not isinstance(doc, dict):
        raise ParseError("manifest root must be an object")
    unknown = set(doc) - {"version", "samples"}
    if unknown:
        raise ParseError(f"unknown top-level keys {sorted(unknown)}")
    if not isinstance(doc.get("version"), int) or not isinstance(doc.get("samples"), list):
        raise ParseError("manifest needs integer 'version' and list 'samples'")
    if doc["version"] != MANIFEST_VERSION:
        raise VersionMismatch(f"unsupported manifest version {doc['version']}")
    records = tuple(_record_from_dict(r, i) for i, r in enumerate(doc["samples"]))
    manifest = DatasetManifest(samples=records, version=doc["version"])
    manifest.validate()
    return manifest


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read and validate a JSON manifest.

    Raises:
        ParseError: the file is not valid JSON or does not follow the schema.
        ValidationError: a record breaks a manifest invariant; the message
            names the record by its image path.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return manifest_from_dict(doc)


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    samples = []
    for s in sorted(manifest.samples, key=lambda r: r.image_path):
        samples.append(
            {
                "subject_id": s.subject_id,
                "session": s.session.value,
                "band": s.band.value if s.band else None,
                "label": s.label.value,
                "morph_parents": list(s.morph_parents) if s.morph_parents else None,
                "image_path": s.image_path,
                "landmarks_path": s.landmarks_path,
            }
        )
    return {"version": manifest.version, "samples": samples}


def dumps_manifest(manifest: DatasetManifest) -> str:
    """Canonical text form: samples sorted by image path, fixed key order."""
    return json.dumps(manifest_to_dict(manifest), indent=2, ensure_ascii=False) + "\n"


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(dumps_manifest(manifest), encoding="utf-8")


@dataclass(frozen=True)
class ProtocolSplit:
    train_subjects: frozenset[str]
    test_subjects: frozenset[str]

    def __post_init__(self):
        overlap = self.train_subjects & self.test_subjects
        if overlap:
            raise ValidationError(f"subjects in both splits: {sorted(overlap)[:5]}")

    def side(self, side: Side) -> frozenset[str]:
        return self.train_subjects if side is Side.TRAIN else self.test_subjects

    def side_of(self, subject_id: str) -> Optional[Side]:
        if subject_id in self.train_subjects:
            return Side.TRAIN
        if subject_id in self.test_subjects:
            return Side.TEST
        return None

    def assign(self, record: SampleRecord) -> Optional[Side]:
        """Side a sample belongs to, or None when it straddles the split."""
        if record.morph_parents is None:
            return self.side_of(record.subject_id)
        sides = {self.side_of(p) for p in record.morph_parents}
        return sides.pop() if len(sides) == 1 else None

    def to_dict(self) -> dict:
        return {
            "train_subjects": sorted(self.train_subjects),
            "test_subjects": sorted(self.test_subjects),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProtocolSplit":
        try:
            return cls(frozenset(doc["train_subjects"]), frozenset(doc["test_subjects"]))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad split document: {exc}") from exc


def save_split(split: ProtocolSplit, path: str | Path) -> None:
    Path(path).write_text(json.dumps(split.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> ProtocolSplit:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return ProtocolSplit.from_dict(doc)


def make_disjoint_split(
    subjects: Iterable[str], train_fraction: float, seed: int
) -> ProtocolSplit:
    """Seeded shuffle of the sorted subjects, then a prefix for training.

    The training size is ``round(train_fraction * n)`` (half-up), kept within
    ``[1, n - 1]`` so neither side is empty.
    """
    pool = sorted(set(subjects))
    if len(pool) < 2:
        raise EmptyInput(f"need at least 2 subjects to split, got {len(pool)}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = math.floor(train_fraction * len(pool) + 0.5)
    n_train = min(max(n_train, 1), len(pool) - 1)
    order = np.random.default_rng(seed).permutation(len(pool))
    shuffled = [pool[i] for i in order]
    return ProtocolSplit(frozenset(shuffled[:n_train]), frozenset(shuffled[n_train:]))


def enumerate_morph_pairs(
    split: ProtocolSplit,
    side: Side,
    max_pairs: Optional[int] = None,
    seed: int = 0,
) -> list[tuple[str, str]]:
    """All unordered within-side subject pairs, optionally subsampled.

    With ``max_pairs`` below the number of available pairs, a seeded uniform
    subset is drawn; the result keeps the lexicographic order of the full list.
    """
    members = sorted(split.side(side))
    pairs = list(itertools.combinations(members, 2))
    if max_pairs is None or max_pairs >= len(pairs):
        return pairs
    if max_pairs <= 0:
        return []
    keep = np.random.default_rng(seed).choice(len(pairs), size=max_pairs, replace=False)
    return [pairs[i] for i in sorted(keep)]
