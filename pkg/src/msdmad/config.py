"""Pipeline configuration read from TOML."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from msdmad.classifier import TrainConfig
from msdmad.embeddings import ProviderDescriptor
from msdmad.errors import ConfigError
from msdmad.features import FeatureMethod, SlerpParams
from msdmad.morph import MorphSpec
from msdmad.protocol import SpectralBand
from msdmad.synthetic import DEFAULT_BAND_NOISE, SynthConfig

ALL_BANDS = tuple(SpectralBand)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    jobs: int = 1
    morph_type: str = "synthetic"
    manifest: Optional[Path] = None
    split: Optional[Path] = None
    store: Optional[Path] = None
    out: Optional[Path] = None
    train_fraction: float = 78 / 143
    providers: dict = field(default_factory=dict)
    synth: SynthConfig = field(default_factory=SynthConfig)
    morph: MorphSpec = field(default_factory=MorphSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    methods: tuple = (FeatureMethod.DIFF, FeatureMethod.SLERP)
    absolute_difference: bool = True
    slerp: SlerpParams = field(default_factory=SlerpParams)
    bands: tuple = ALL_BANDS
    fusion_rule: str = "sum"
    apcer_targets: tuple = (0.05, 0.10)

    def validate(self) -> None:
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if not self.bands:
            raise ConfigError("at least one band is required")
        if self.fusion_rule not in ("sum", "mean"):
            raise ConfigError(f"fusion rule must be 'sum' or 'mean', got {self.fusion_rule!r}")
        if len(self.apcer_targets) != 2 or any(not 0 < t < 1 for t in self.apcer_targets):
            raise ConfigError(f"apcer_targets must be two values in (0, 1), got {self.apcer_targets}")
        for p in (self.manifest, self.split, self.store):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"path does not exist: {p}")

    def with_overrides(self, seed: Optional[int] = None, jobs: Optional[int] = None, out=None) -> "PipelineConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, synth=replace(cfg.synth, seed=seed), train=replace(cfg.train, seed=seed))
        if jobs is not None:
            cfg = replace(cfg, jobs=jobs)
        if out is not None:
            cfg = replace(cfg, out=Path(out))
        return cfg


def _take(section: dict, name: str, allowed: set) -> dict:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
    return section


def _band(text: str) -> SpectralBand:
    try:
        return SpectralBand.parse(str(text))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(doc: dict, base_dir: Path = Path(".")) -> PipelineConfig:
    sections = {"experiment", "paths", "providers", "synthetic", "morph", "train", "features", "fusion", "eval"}
    unknown = set(doc) - sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kw: dict = {}
    try:
        exp = _take(doc.get("experiment", {}), "experiment", {"seed", "jobs", "morph_type", "train_fraction"})
        kw.update({k: exp[k] for k in exp})

        paths = _take(doc.get("paths", {}), "paths", {"manifest", "split", "store", "out"})
        for k, v in paths.items():
            p = Path(v)
            kw[k] = p if p.is_absolute() else base_dir / p

        providers = {}
        for name, body in doc.get("providers", {}).items():
            body = _take(body, f"providers.{name}", {"kind", "dimension", "model_path", "seed"})
            model_path = body.get("model_path")
            if model_path and not Path(model_path).is_absolute():
                model_path = str(base_dir / model_path)
            providers[name] = ProviderDescriptor(
                name, int(body.get("dimension", 0)), body.get("kind", "synthetic"), model_path, body.get("seed")
            )
        kw["providers"] = providers

        seed = kw.get("seed", PipelineConfig.seed)
        syn = dict(_take(doc.get("synthetic", {}), "synthetic", set(SynthConfig.__dataclass_fields__) - {"seed"}))
        if "band_noise" in syn:
            noise = dict(DEFAULT_BAND_NOISE)
            noise.update({_band(k): float(v) for k, v in syn["band_noise"].items()})
            syn["band_noise"] = noise
        kw["synth"] = SynthConfig(seed=seed, **syn)

        morph = _take(doc.get("morph", {}), "morph", {"alpha"})
        kw["morph"] = MorphSpec(alpha=float(morph.get("alpha", 0.5)))

        train = _take(doc.get("train", {}), "train", set(TrainConfig.__dataclass_fields__) - {"seed"})
        kw["train"] = TrainConfig(seed=seed, **train)

        feats = _take(doc.get("features", {}), "features", {"methods", "absolute_difference", "t_schedule"})
        if "methods" in feats:
            kw["methods"] = tuple(FeatureMethod(m) for m in feats["methods"])
            if FeatureMethod.EMBEDDING in kw["methods"]:
                raise ConfigError("'Embedding' is not a D-MAD feature method")
        if "absolute_difference" in feats:
            kw["absolute_difference"] = bool(feats["absolute_difference"])
        if "t_schedule" in feats:
            kw["slerp"] = SlerpParams(t_schedule=tuple(float(t) for t in feats["t_schedule"]))

        fusion = _take(doc.get("fusion", {}), "fusion", {"rule", "bands"})
        if "rule" in fusion:
            kw["fusion_rule"] = fusion["rule"]
        if "bands" in fusion:
            kw["bands"] = tuple(_band(b) for b in fusion["bands"])

        ev = _take(doc.get("eval", {}), "eval", {"apcer_targets"})
        if "apcer_targets" in ev:
            kw["apcer_targets"] = tuple(float(t) for t in ev["apcer_targets"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    cfg = PipelineConfig(**kw)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, path.parent)
