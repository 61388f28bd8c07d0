"""Sum-rule fusion of per-band morph scores and the final decision."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from msdmad.errors import EmptyScores
from msdmad.protocol import SpectralBand


class Decision(enum.Enum):
    BONA_FIDE = "BonaFide"
    ATTACK = "Attack"


@dataclass(frozen=True)
class FusionResult:
    fused: float
    decision: Decision
    threshold: float
    bands_used: frozenset


def _checked(scores: Mapping[SpectralBand, float]) -> dict:
    if not scores:
        raise EmptyScores("no band scores to fuse")
    out = {}
    for band, s in scores.items():
        s = float(s)
        if not (0.0 <= s <= 1.0) or math.isnan(s):
            raise ValueError(f"score for {band} outside [0, 1]: {s}")
        out[band] = s
    return out


def sum_fuse(scores: Mapping[SpectralBand, float]) -> float:
    """Sum of the present band scores, in [0, number of bands]."""
    vals = _checked(scores)
    # fsum is exact, so the result does not depend on band order
    return math.fsum(vals.values())


def mean_fuse(scores: Mapping[SpectralBand, float]) -> float:
    vals = _checked(scores)
    return math.fsum(vals.values()) / len(vals)


def decide(fused: float, threshold: float) -> Decision:
    """Attack when the fused score reaches the threshold (ties are attacks)."""
    return Decision.ATTACK if fused >= threshold else Decision.BONA_FIDE


def fuse(scores: Mapping[SpectralBand, float], threshold: float, mean_rule: bool = False) -> FusionResult:
    f = mean_fuse(scores) if mean_rule else sum_fuse(scores)
    return FusionResult(f, decide(f, threshold), threshold, frozenset(scores))


def sum_fuse_matrix(matrix: np.ndarray) -> np.ndarray:
    """Row-wise exact sums of an (n_trials, n_bands) score matrix."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if m.shape[1] == 0:
        raise EmptyScores("no band scores to fuse")
    return np.array([math.fsum(row) for row in m])
