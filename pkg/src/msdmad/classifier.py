"""Per-band L2-regularised logistic regression trained by full-batch gradient descent."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from msdmad.errors import (
    DimensionMismatch,
    NumericError,
    ParseError,
    SingleClassInput,
    VersionMismatch,
)
from msdmad.features import DmadFeature, FeatureMethod
from msdmad.protocol import SpectralBand

MODEL_FORMAT = "msdmad-linear-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2_lambda: float = 1e-4
    seed: int = 0
    convergence_tol: float = 1e-8
    standardize: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs <= 0 or self.l2_lambda < 0:
            raise ValueError(f"invalid training configuration: {self}")


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float
    band: Optional[SpectralBand] = None
    method: FeatureMethod = FeatureMethod.DIFF
    train_meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return int(self.weights.shape[0])

    def mirrored(self) -> "LinearModel":
        return replace(self, weights=-self.weights, bias=-self.bias)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features).astype(np.float64, copy=False)
    rows = [f.values if isinstance(f, DmadFeature) else np.asarray(f, dtype=np.float64) for f in features]
    if len({r.shape for r in rows}) > 1:
        raise DimensionMismatch("features have inconsistent dimensions")
    return np.vstack(rows)


def logistic_loss(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean cross-entropy plus ``l2 / 2 * |w|^2`` (bias unpenalised)."""
    z = x @ w + b
    # log(1 + exp(z)) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))


def logistic_gradient(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float):
    r = sigmoid(x @ w + b) - y
    return x.T @ r / len(y) + l2 * w, float(np.mean(r))


def train_logistic(
    features,
    labels: Sequence[int],
    config: TrainConfig = TrainConfig(),
    band: Optional[SpectralBand] = None,
    method: FeatureMethod = FeatureMethod.DIFF,
) -> LinearModel:
    """Fit a linear morph scorer (label 1 = morph) from zero initialisation.

    With ``config.standardize`` the descent runs on z-scored features and the
    scaling is folded back into the returned weights and bias. Training stops
    early once the loss changes by less than ``convergence_tol``; a loss
    increase raises ``NumericError``.
    """
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} features but {y.shape[0]} labels")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 (bona fide) or 1 (morph)")
    if y.min() == y.max():
        raise SingleClassInput("training data holds a single class")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite feature values")

    if config.standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd < 1e-12] = 1.0
        xs = (x - mu) / sd
    else:
        mu, sd, xs = np.zeros(x.shape[1]), np.ones(x.shape[1]), x

    w = np.zeros(x.shape[1])
    b = 0.0
    lr, l2 = config.learning_rate, config.l2_lambda
    loss = logistic_loss(w, b, xs, y, l2)
    epochs_run = 0
    for epoch in range(config.epochs):
        gw, gb = logistic_gradient(w, b, xs, y, l2)
        w = w - lr * gw
        b = b - lr * gb
        new_loss = logistic_loss(w, b, xs, y, l2)
        epochs_run = epoch + 1
        if new_loss > loss + 1e-12 * max(1.0, abs(loss)):
            raise NumericError(
                f"loss increased at epoch {epochs_run} ({loss!r} -> {new_loss!r}); "
                "lower the learning rate"
            )
        delta = loss - new_loss
        loss = new_loss
        if delta < config.convergence_tol:
            break

    weights = w / sd
    bias = float(b - np.dot(weights, mu))
    meta = {"epochs": epochs_run, "final_loss": loss, "seed": config.seed}
    return LinearModel(weights, bias, band, method, meta)


def score(model: LinearModel, feature) -> float:
    """Morph likelihood in [0, 1]; higher means more attack-like."""
    x = feature.values if isinstance(feature, DmadFeature) else np.asarray(feature, dtype=np.float64)
    if x.shape != model.weights.shape:
        raise DimensionMismatch(f"model expects {model.dimension} values, got {x.shape}")
    return float(sigmoid(np.dot(model.weights, x) + model.bias))


def score_matrix(model: LinearModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    if x.shape[1] != model.dimension:
        raise DimensionMismatch(f"model expects {model.dimension} values, got {x.shape[1]}")
    return sigmoid(x @ model.weights + model.bias)


def save_model(model: LinearModel, path: str | Path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "band": model.band.value if model.band else None,
        "method": model.method.value,
        "dimension": model.dimension,
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "train_meta": model.train_meta,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> LinearModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"{path}: model version {doc.get('version')}, expected {MODEL_VERSION}")
    try:
        weights = np.array(doc["weights"], dtype=np.float64)
        if weights.shape != (doc["dimension"],):
            raise ParseError(f"{path}: weights do not match declared dimension")
        return LinearModel(
            weights=weights,
            bias=float(doc["bias"]),
            band=SpectralBand(doc["band"]) if doc["band"] else None,
            method=FeatureMethod(doc["method"]),
            train_meta=dict(doc.get("train_meta", {})),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
