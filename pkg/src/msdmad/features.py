"""Differential features: embedding differences and hierarchical SLERP fusion."""

from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from msdmad.embeddings import EmbeddingVector
from msdmad.errors import AntipodalVectors, DimensionMismatch, ParseError, WrongArity
from msdmad.protocol import SpectralBand

MAGIC = b"DMF1"
_HEADER = struct.Struct("<4sBBI")
NO_BAND = 255
N_SLERP_INPUTS = 6


class FeatureMethod(enum.Enum):
    DIFF = "DiffFeature"
    SLERP = "SlerpFeature"
    EMBEDDING = "Embedding"  # raw embeddings in the store, not a D-MAD feature

    @property
    def code(self) -> int:
        return list(FeatureMethod).index(self)

    @classmethod
    def from_code(cls, code: int) -> "FeatureMethod":
        try:
            return list(cls)[code]
        except IndexError:
            raise ParseError(f"unknown method byte {code}") from None


def band_code(band: Optional[SpectralBand]) -> int:
    return NO_BAND if band is None else band.index - 1


def band_from_code(code: int) -> Optional[SpectralBand]:
    if code == NO_BAND:
        return None
    try:
        return list(SpectralBand)[code]
    except IndexError:
        raise ParseError(f"unknown band byte {code}") from None


@dataclass(frozen=True)
class DmadFeature:
    values: np.ndarray
    method: FeatureMethod
    band: Optional[SpectralBand]  # None for visible-spectrum trusted captures
    provenance: tuple[str, str] = ("", "")
    flags: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class SlerpParams:
    t_schedule: tuple[float, float, float] = (0.5, 0.5, 0.5)
    parallel_epsilon: float = 1e-7
    antipodal_epsilon: float = 1e-7

    def __post_init__(self):
        if len(self.t_schedule) != 3:
            raise ValueError("t_schedule needs one value per tree level (3)")
        if any(not 0.0 <= t <= 1.0 for t in self.t_schedule):
            raise ValueError(f"t values must lie in [0, 1]: {self.t_schedule}")


def _vec(v) -> np.ndarray:
    if isinstance(v, (EmbeddingVector, DmadFeature)):
        v = v.values
    return np.asarray(v, dtype=np.float64)


def difference_feature(
    e_ref,
    e_trusted,
    band: Optional[SpectralBand] = None,
    provenance: tuple[str, str] = ("", ""),
    absolute: bool = False,
) -> DmadFeature:
    """Signed element-wise ``e_ref - e_trusted``; ``absolute`` takes magnitudes."""
    a, b = _vec(e_ref), _vec(e_trusted)
    if a.shape != b.shape:
        raise DimensionMismatch(f"embedding dimensions differ: {a.shape} vs {b.shape}")
    d = a - b
    if absolute:
        d = np.abs(d)
    return DmadFeature(d, FeatureMethod.DIFF, band, provenance)


def _angle(v0: np.ndarray, v1: np.ndarray) -> float:
    # same angle as arccos(v0.v1) but accurate near 0 and pi
    return 2.0 * np.arctan2(np.linalg.norm(v0 - v1), np.linalg.norm(v0 + v1))


def slerp(v0, v1, t: float, params: SlerpParams = SlerpParams()) -> np.ndarray:
    """Constant-angular-speed interpolation between two unit vectors.

    Falls back to normalised linear interpolation below
    ``params.parallel_epsilon`` radians and refuses (near) antipodal inputs,
    whose interpolation plane is undefined.
    """
    a, b = _vec(v0), _vec(v1)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector dimensions differ: {a.shape} vs {b.shape}")
    omega = _angle(a, b)
    if np.pi - omega < params.antipodal_epsilon:
        raise AntipodalVectors(f"vectors are antipodal (angle {omega!r})")
    if omega < params.parallel_epsilon:
        out = (1.0 - t) * a + t * b
    else:
        s = np.sin(omega)
        out = (np.sin((1.0 - t) * omega) / s) * a + (np.sin(t * omega) / s) * b
    return out / np.linalg.norm(out)


def _unit_or_canonical(v: np.ndarray) -> tuple[np.ndarray, bool]:
    n = np.linalg.norm(v)
    if n == 0.0:
        e = np.zeros_like(v)
        e[0] = 1.0
        return e, True
    return v / n, False


def hierarchical_slerp_fuse(
    features: Sequence, params: SlerpParams = SlerpParams()
) -> DmadFeature:
    """Fuse six per-network difference features with a 3-level SLERP tree.

    Level 1 fuses (1, 2), (3, 4), (5, 6); level 2 fuses the first two
    results; level 3 fuses that with the third level-1 result. Inputs are
    normalised first; a zero input becomes the first basis vector and the
    output carries a ``zero_input`` flag.
    """
    if len(features) != N_SLERP_INPUTS:
        raise WrongArity(f"expected {N_SLERP_INPUTS} features, got {len(features)}")
    vecs = [_vec(f) for f in features]
    if len({v.shape for v in vecs}) != 1:
        raise DimensionMismatch(f"feature dimensions differ: {[v.shape for v in vecs]}")
    units, zero = zip(*(_unit_or_canonical(v) for v in vecs))
    t1, t2, t3 = params.t_schedule
    l1 = [slerp(units[i], units[i + 1], t1, params) for i in (0, 2, 4)]
    l2 = slerp(l1[0], l1[1], t2, params)
    fused = slerp(l2, l1[2], t3, params)
    first = features[0] if isinstance(features[0], DmadFeature) else None
    return DmadFeature(
        fused,
        FeatureMethod.SLERP,
        first.band if first else None,
        first.provenance if first else ("", ""),
        frozenset({"zero_input"}) if any(zero) else frozenset(),
    )


def write_records(path: str | Path, records: Iterable[tuple[FeatureMethod, Optional[SpectralBand], np.ndarray]]) -> int:
    """Write one or more DMF1 records back to back; returns the record count."""
    n = 0
    with open(path, "wb") as fh:
        for method, band, values in records:
            v = np.ascontiguousarray(values, dtype="<f8").ravel()
            fh.write(_HEADER.pack(MAGIC, method.code, band_code(band), v.shape[0]))
            fh.write(v.tobytes())
            n += 1
    return n


def read_records(path: str | Path) -> list[tuple[FeatureMethod, Optional[SpectralBand], np.ndarray]]:
    data = Path(path).read_bytes()
    out = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise ParseError(f"{path}: truncated header at byte {pos}")
        magic, method, band, dim = _HEADER.unpack_from(data, pos)
        if magic != MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r} at byte {pos}")
        pos += _HEADER.size
        end = pos + 8 * dim
        if end > len(data):
            raise ParseError(f"{path}: truncated payload at byte {pos}")
        values = np.frombuffer(data, dtype="<f8", count=dim, offset=pos).astype(np.float64)
        out.append((FeatureMethod.from_code(method), band_from_code(band), values))
        pos = end
    return out


def write_feature_matrix(path: str | Path, method: FeatureMethod, band: Optional[SpectralBand], matrix: np.ndarray) -> int:
    return write_records(path, ((method, band, row) for row in np.atleast_2d(matrix)))


def read_feature_matrix(path: str | Path) -> np.ndarray:
    recs = read_records(path)
    if not recs:
        return np.zeros((0, 0))
    return np.vstack([r[2] for r in recs])


INDEX_COLUMNS = ("feature_file", "record", "reference_id", "trusted_id", "band", "label")


def write_index(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=INDEX_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_index(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["record"] = int(row["record"])
    return rows


def slerp_rows(v0: np.ndarray, v1: np.ndarray, t: float, params: SlerpParams = SlerpParams()) -> np.ndarray:
    """Row-wise ``slerp`` over two (n, D) arrays of unit vectors."""
    omega = 2.0 * np.arctan2(np.linalg.norm(v0 - v1, axis=1), np.linalg.norm(v0 + v1, axis=1))
    if np.any(np.pi - omega < params.antipodal_epsilon):
        raise AntipodalVectors("antipodal rows in slerp_rows")
    small = omega < params.parallel_epsilon
    s = np.where(small, 1.0, np.sin(omega))
    w0 = np.where(small, 1.0 - t, np.sin((1.0 - t) * omega) / s)[:, None]
    w1 = np.where(small, t, np.sin(t * omega) / s)[:, None]
    out = w0 * v0 + w1 * v1
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def hierarchical_slerp_rows(stack: Sequence[np.ndarray], params: SlerpParams = SlerpParams()) -> np.ndarray:
    """Batched ``hierarchical_slerp_fuse`` over six (n, D) difference matrices."""
    if len(stack) != N_SLERP_INPUTS:
        raise WrongArity(f"expected {N_SLERP_INPUTS} feature matrices, got {len(stack)}")
    units = []
    for m in stack:
        m = np.atleast_2d(np.asarray(m, dtype=np.float64))
        n = np.linalg.norm(m, axis=1, keepdims=True)
        u = np.divide(m, n, out=np.zeros_like(m), where=n > 0)
        u[n[:, 0] == 0, 0] = 1.0
        units.append(u)
    if len({u.shape for u in units}) != 1:
        raise DimensionMismatch("feature matrices differ in shape")
    t1, t2, t3 = params.t_schedule
    l1 = [slerp_rows(units[i], units[i + 1], t1, params) for i in (0, 2, 4)]
    return slerp_rows(slerp_rows(l1[0], l1[1], t2, params), l1[2], t3, params)
