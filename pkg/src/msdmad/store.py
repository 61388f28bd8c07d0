"""On-disk embedding store shared by the synthetic and image-based routes.

Layout of a store directory::

    store.json                 dimension, network names, provenance
    split.json                 train/test subject protocol
    index.csv                  one row per sample (reference or trusted capture)
    embeddings_<network>.dmf   one DMF1 record per index row, same order
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from msdmad.errors import ParseError, ValidationError
from msdmad.features import FeatureMethod, read_records, write_records
from msdmad.protocol import (
    Label,
    ProtocolSplit,
    SessionId,
    SpectralBand,
    load_split,
    save_split,
)

STORE_VERSION = 1
STORE_COLUMNS = (
    "record",
    "sample_id",
    "subject_id",
    "role",
    "session",
    "band",
    "label",
    "morph_parents",
    "sample_index",
)


@dataclass(frozen=True)
class StoreSample:
    sample_id: str
    subject_id: str
    role: str  # "reference" or "trusted"
    session: SessionId
    label: Label
    band: Optional[SpectralBand] = None
    morph_parents: Optional[tuple[str, str]] = None
    sample_index: int = 0


@dataclass
class EmbeddingStore:
    dimension: int
    networks: list[str]
    samples: list[StoreSample]
    vectors: dict[str, np.ndarray]  # network -> (n_samples, dimension)
    split: ProtocolSplit
    meta: dict

    def __post_init__(self):
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate sample ids in embedding store")
        for net in self.networks:
            m = self.vectors.get(net)
            if m is None or m.shape != (len(self.samples), self.dimension):
                raise ValidationError(f"network {net!r}: vectors do not match the sample list")
        self._row = {sid: i for i, sid in enumerate(ids)}

    def row(self, sample_id: str) -> int:
        return self._row[sample_id]

    def save(self, directory: str | Path) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        doc = {
            "version": STORE_VERSION,
            "dimension": self.dimension,
            "networks": self.networks,
            "meta": self.meta,
        }
        (out / "store.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        save_split(self.split, out / "split.json")
        with open(out / "index.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(STORE_COLUMNS)
            for i, s in enumerate(self.samples):
                writer.writerow(
                    [
                        i,
                        s.sample_id,
                        s.subject_id,
                        s.role,
                        s.session.value,
                        s.band.value if s.band else "",
                        s.label.value,
                        "|".join(s.morph_parents) if s.morph_parents else "",
                        s.sample_index,
                    ]
                )
        for net in self.networks:
            write_records(
                out / f"embeddings_{net}.dmf",
                ((FeatureMethod.EMBEDDING, s.band, self.vectors[net][i]) for i, s in enumerate(self.samples)),
            )
        return out

    @classmethod
    def load(cls, directory: str | Path) -> "EmbeddingStore":
        src = Path(directory)
        try:
            doc = json.loads((src / "store.json").read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"{src}: not an embedding store ({exc})") from exc
        if doc.get("version") != STORE_VERSION:
            raise ParseError(f"{src}: unsupported store version {doc.get('version')}")
        samples = []
        try:
            with open(src / "index.csv", newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    parents = tuple(row["morph_parents"].split("|")) if row["morph_parents"] else None
                    samples.append(
                        StoreSample(
                            sample_id=row["sample_id"],
                            subject_id=row["subject_id"],
                            role=row["role"],
                            session=SessionId(row["session"]),
                            label=Label(row["label"]),
                            band=SpectralBand(row["band"]) if row["band"] else None,
                            morph_parents=parents,
                            sample_index=int(row["sample_index"]),
                        )
                    )
        except (OSError, KeyError, ValueError) as exc:
            raise ParseError(f"{src}/index.csv: {exc}") from exc
        vectors = {}
        for net in doc["networks"]:
            recs = read_records(src / f"embeddings_{net}.dmf")
            if len(recs) != len(samples):
                raise ParseError(f"{src}: {net} holds {len(recs)} records for {len(samples)} samples")
            vectors[net] = np.vstack([r[2] for r in recs]) if recs else np.zeros((0, doc["dimension"]))
        return cls(doc["dimension"], list(doc["networks"]), samples, vectors, load_split(src / "split.json"), doc.get("meta", {}))
