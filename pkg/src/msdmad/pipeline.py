"""Experiment stages: trials -> features -> per-band models -> fused scores -> reports.

Every stage reads and writes plain files under one work directory so that
stages can be rerun on their own::

    store/      embedding store (see msdmad.store)
    features/   <method>_<band>_<side>.dmf plus index.csv
    models/     <method>_<band>.json
    scores/     scores_<method>.csv (+ visible_<method>.csv, thresholds.json)
    reports/    table1.csv, table2.csv, report.json, det_<method>.svg, figures/
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from statistics import median
from typing import Optional

import numpy as np

from msdmad.classifier import load_model, save_model, score_matrix, train_logistic
from msdmad.config import PipelineConfig
from msdmad.embeddings import embed
from msdmad.errors import ConfigError, DataError, NumericError, ParseError
from msdmad.features import (
    FeatureMethod,
    N_SLERP_INPUTS,
    hierarchical_slerp_rows,
    read_feature_matrix,
    read_index,
    write_feature_matrix,
    write_index,
)
from msdmad.fusion import decide, sum_fuse_matrix
from msdmad.metrics import (
    EvalReport,
    ScoreSet,
    det_curve,
    emit_det_svg,
    emit_report,
    eer_point,
    report_row,
)
from msdmad.morph import read_image
from msdmad.protocol import (
    DatasetManifest,
    Label,
    ProtocolSplit,
    SessionId,
    Side,
    SpectralBand,
    load_manifest,
    load_split,
    make_disjoint_split,
)
from msdmad.store import EmbeddingStore, StoreSample
from msdmad.synthetic import generate_synthetic_corpus

logger = logging.getLogger(__name__)

VISIBLE = "VIS"
SCORE_COLUMNS = ("reference_id", "trusted_subject", "label") + tuple(f"S_{b.short}" for b in SpectralBand) + ("F", "decision")


def band_key(band: Optional[SpectralBand]) -> str:
    return band.short if band is not None else VISIBLE


def band_from_key(key: str) -> Optional[SpectralBand]:
    return None if key == VISIBLE else SpectralBand.parse(key)


@dataclass(frozen=True)
class Trial:
    reference_id: str
    trusted_id: str
    trusted_subject: str
    sample_index: int
    label: Label

    @property
    def fusion_key(self) -> tuple[str, str, int]:
        return (self.reference_id, self.trusted_subject, self.sample_index)


def build_trials(store: EmbeddingStore, side: Side, band: Optional[SpectralBand]) -> list[Trial]:
    """All (reference, trusted capture) comparisons of one side in one band.

    Bona fide references meet every capture of their own subject; a morph
    reference meets every capture of each of its two parents.
    """
    members = store.split.side(side)
    trusted: dict[str, list[StoreSample]] = {}
    for s in store.samples:
        if s.role == "trusted" and s.band == band and s.subject_id in members:
            if band is None and s.session is not SessionId.SESSION2:
                continue
            trusted.setdefault(s.subject_id, []).append(s)
    for caps in trusted.values():
        caps.sort(key=lambda c: (c.sample_index, c.sample_id))
    bona, morph = [], []
    for ref in store.samples:
        if ref.role != "reference":
            continue
        if ref.label is Label.BONA_FIDE and ref.subject_id in members:
            bona += [Trial(ref.sample_id, c.sample_id, c.subject_id, c.sample_index, Label.BONA_FIDE) for c in trusted.get(ref.subject_id, [])]
        elif ref.label is Label.MORPH and ref.morph_parents and set(ref.morph_parents) <= members:
            for parent in ref.morph_parents:
                morph += [Trial(ref.sample_id, c.sample_id, c.subject_id, c.sample_index, Label.MORPH) for c in trusted.get(parent, [])]
    return bona + morph


def feature_matrix(
    store: EmbeddingStore, trials: list[Trial], method: FeatureMethod, config: PipelineConfig
) -> np.ndarray:
    ref_rows = np.array([store.row(t.reference_id) for t in trials], dtype=np.int64)
    tru_rows = np.array([store.row(t.trusted_id) for t in trials], dtype=np.int64)
    if method is FeatureMethod.DIFF:
        vec = store.vectors[store.networks[0]]
        d = vec[ref_rows] - vec[tru_rows]
        return np.abs(d) if config.absolute_difference else d
    if method is FeatureMethod.SLERP:
        if len(store.networks) != N_SLERP_INPUTS:
            raise ConfigError(
                f"SlerpFeature needs {N_SLERP_INPUTS} embedding networks, store has {len(store.networks)}"
            )
        diffs = [store.vectors[n][ref_rows] - store.vectors[n][tru_rows] for n in store.networks]
        return hierarchical_slerp_rows(diffs, config.slerp)
    raise ConfigError(f"unsupported feature method {method}")


def _eval_bands(config: PipelineConfig) -> list[Optional[SpectralBand]]:
    return list(config.bands) + [None]


def _has_band(store: EmbeddingStore, band: Optional[SpectralBand]) -> bool:
    if band is None:
        return any(s.role == "trusted" and s.session is SessionId.SESSION2 for s in store.samples)
    return any(s.role == "trusted" and s.band == band for s in store.samples)


# --- stage: store ------------------------------------------------------------


def store_from_manifest(
    manifest: DatasetManifest, image_root: Path, providers: dict, split: ProtocolSplit
) -> EmbeddingStore:
    """Embed every manifest image with each configured provider."""
    if not providers:
        raise ConfigError("embedding images needs at least one [providers.<name>] section")
    samples: list[StoreSample] = []
    paths: list[Path] = []
    counters: dict[tuple, int] = {}
    for rec in sorted(manifest.samples, key=lambda r: r.image_path):
        if rec.label is Label.MORPH or rec.session is SessionId.SESSION1:
            role = "reference"
        else:
            role = "trusted"
        key = (rec.subject_id, rec.session, rec.band)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        samples.append(StoreSample(rec.image_path, rec.subject_id, role, rec.session, rec.label, rec.band, rec.morph_parents, idx))
        paths.append(image_root / rec.image_path)
    dims = {p.dimension for p in providers.values()}
    if len(dims) != 1:
        raise ConfigError(f"providers disagree on embedding dimension: {sorted(dims)}")
    dim = dims.pop()
    names = list(providers)  # config order; the first provider feeds DiffFeature
    vectors = {n: np.zeros((len(samples), dim)) for n in names}
    for i, path in enumerate(paths):
        img = read_image(path)
        for n in names:
            vectors[n][i] = embed(providers[n], img).values
    return EmbeddingStore(dim, names, samples, vectors, split, {"source": "manifest"})


def prepare_store(config: PipelineConfig, workdir: Path) -> EmbeddingStore:
    target = workdir / "store"
    if config.store is not None:
        store = EmbeddingStore.load(config.store)
    elif config.manifest is not None:
        manifest = load_manifest(config.manifest)
        if config.split is not None:
            split = load_split(config.split)
        else:
            split = make_disjoint_split(manifest.subjects(), config.train_fraction, config.seed)
        store = store_from_manifest(manifest, Path(config.manifest).parent, config.providers, split)
    else:
        store, _ = generate_synthetic_corpus(config.synth)
    store.save(target)
    return store


# --- stage: extract ------------------------------------------------------------


def extract(config: PipelineConfig, workdir: Path, store: Optional[EmbeddingStore] = None) -> Path:
    store = store or EmbeddingStore.load(workdir / "store")
    fdir = workdir / "features"
    fdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for method in config.methods:
        for band in _eval_bands(config):
            if not _has_band(store, band):
                if band is None:
                    continue
                raise DataError(f"store has no trusted captures in band {band.value}")
            for side in (Side.TRAIN, Side.TEST):
                trials = build_trials(store, side, band)
                if not trials:
                    raise DataError(f"no {side.value} trials for band {band_key(band)}")
                name = f"{method.value}_{band_key(band)}_{side.value}.dmf"
                write_feature_matrix(fdir / name, method, band, feature_matrix(store, trials, method, config))
                rows += [
                    {
                        "feature_file": name,
                        "record": i,
                        "reference_id": t.reference_id,
                        "trusted_id": t.trusted_id,
                        "band": band_key(band),
                        "label": t.label.value,
                    }
                    for i, t in enumerate(trials)
                ]
    write_index(fdir / "index.csv", rows)
    logger.info("wrote %d feature records to %s", len(rows), fdir)
    return fdir


@dataclass
class FeatureBlock:
    trials: list[Trial]
    matrix: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label.target for t in self.trials])


def load_features(workdir: Path, store: Optional[EmbeddingStore] = None) -> dict[tuple, FeatureBlock]:
    """Feature blocks keyed by (method, band key, side)."""
    store = store or EmbeddingStore.load(workdir / "store")
    fdir = workdir / "features"
    try:
        index = read_index(fdir / "index.csv")
    except (OSError, KeyError, ValueError) as exc:
        raise ParseError(f"{fdir}: missing or bad feature index ({exc})") from exc
    grouped: dict[str, list[dict]] = {}
    for row in index:
        grouped.setdefault(row["feature_file"], []).append(row)
    blocks = {}
    for name, rows in grouped.items():
        method, bkey, side = name[: -len(".dmf")].split("_")
        matrix = read_feature_matrix(fdir / name)
        trials = []
        for row in sorted(rows, key=lambda r: r["record"]):
            cap = store.samples[store.row(row["trusted_id"])]
            trials.append(Trial(row["reference_id"], row["trusted_id"], cap.subject_id, cap.sample_index, Label(row["label"])))
        if len(trials) != len(matrix):
            raise ParseError(f"{name}: {len(matrix)} records but {len(trials)} index rows")
        blocks[(FeatureMethod(method), bkey, side)] = FeatureBlock(trials, matrix)
    return blocks


# --- stage: train ------------------------------------------------------------


def train(config: PipelineConfig, workdir: Path, blocks: Optional[dict] = None) -> Path:
    blocks = blocks or load_features(workdir)
    mdir = workdir / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    tasks = sorted({(m, b) for (m, b, side) in blocks if side == Side.TRAIN.value}, key=lambda k: (k[0].code, k[1]))

    def fit(task):
        method, bkey = task
        block = blocks[(method, bkey, Side.TRAIN.value)]
        return train_logistic(block.matrix, block.labels, config.train, band_from_key(bkey), method)

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        models = list(pool.map(fit, tasks))
    for (method, bkey), model in zip(tasks, models):
        save_model(model, mdir / f"{method.value}_{bkey}.json")
    return mdir


# --- stage: eval (score + fuse) ------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _score_blocks(blocks, mdir: Path, method: FeatureMethod, bkey: str) -> dict[str, np.ndarray]:
    model = load_model(mdir / f"{method.value}_{bkey}.json")
    out = {}
    for side in (Side.TRAIN.value, Side.TEST.value):
        s = score_matrix(model, blocks[(method, bkey, side)].matrix)
        if not np.all(np.isfinite(s)):
            raise NumericError(f"non-finite scores for {method.value}/{bkey}")
        out[side] = s
    return out


def _fused_table(blocks, scores, method, bands, side, rule):
    """Align trials present in every band and fuse their scores."""
    keyed = []
    for band in bands:
        block = blocks[(method, band.short, side)]
        keyed.append({t.fusion_key: (t, s) for t, s in zip(block.trials, scores[band.short][side])})
    common = [k for k in (t.fusion_key for t in blocks[(method, bands[0].short, side)].trials) if all(k in m for m in keyed)]
    if not common:
        raise DataError(f"no trials shared by all fused bands ({side})")
    trials = [keyed[0][k][0] for k in common]
    matrix = np.array([[m[k][1] for m in keyed] for k in common])
    fused = sum_fuse_matrix(matrix)
    if rule == "mean":
        fused = fused / len(bands)
    return trials, matrix, fused


def evaluate(config: PipelineConfig, workdir: Path, blocks: Optional[dict] = None) -> Path:
    blocks = blocks or load_features(workdir)
    mdir, sdir = workdir / "models", workdir / "scores"
    sdir.mkdir(parents=True, exist_ok=True)
    thresholds = {}
    for method in config.methods:
        bands = list(config.bands)
        scores = {b.short: _score_blocks(blocks, mdir, method, b.short) for b in bands}
        train_trials, _, train_f = _fused_table(blocks, scores, method, bands, Side.TRAIN.value, config.fusion_rule)
        y = np.array([t.label.target for t in train_trials])
        thr = eer_point(ScoreSet(train_f[y == 0], train_f[y == 1])).threshold
        if not math.isfinite(thr):
            raise NumericError(f"{method.value}: degenerate fusion threshold {thr}")
        thresholds[method.value] = thr

        trials, matrix, fused = _fused_table(blocks, scores, method, bands, Side.TEST.value, config.fusion_rule)
        col = {b.short: j for j, b in enumerate(bands)}
        with open(sdir / f"scores_{method.value}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SCORE_COLUMNS)
            for t, row, f in zip(trials, matrix, fused):
                s_cols = [_fmt(row[col[b.short]]) if b.short in col else "" for b in SpectralBand]
                writer.writerow([t.reference_id, t.trusted_subject, t.label.value, *s_cols, _fmt(f), decide(f, thr).value])

        if (method, VISIBLE, Side.TEST.value) in blocks:
            vis = _score_blocks(blocks, mdir, method, VISIBLE)[Side.TEST.value]
            with open(sdir / f"visible_{method.value}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(("reference_id", "trusted_subject", "label", "S_VIS"))
                for t, s in zip(blocks[(method, VISIBLE, Side.TEST.value)].trials, vis):
                    writer.writerow([t.reference_id, t.trusted_subject, t.label.value, _fmt(s)])
    (sdir / "thresholds.json").write_text(json.dumps(thresholds, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sdir


# --- stage: report ---------------------------------------------------------------


def _read_scores(path: Path, columns: list[str]) -> dict[str, ScoreSet]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for c in columns:
        bona = [float(r[c]) for r in rows if r["label"] == Label.BONA_FIDE.value and r[c] != ""]
        att = [float(r[c]) for r in rows if r["label"] == Label.MORPH.value and r[c] != ""]
        if bona and att:
            out[c] = ScoreSet(np.array(bona), np.array(att))
    return out


@dataclass
class ReportBundle:
    table1: list[EvalReport]
    table2: list[EvalReport]
    curves: dict[str, list]


def build_reports(config: PipelineConfig, workdir: Path) -> ReportBundle:
    sdir = workdir / "scores"
    targets = tuple(config.apcer_targets)
    table1, table2, curves = [], [], {}
    for method in config.methods:
        path = sdir / f"scores_{method.value}.csv"
        if not path.exists():
            raise DataError(f"missing score file {path}; run 'eval' first")
        cols = [f"S_{b.short}" for b in config.bands]
        sets = _read_scores(path, cols + ["F"])
        rows = [report_row(b.short, sets[f"S_{b.short}"], targets) for b in config.bands]
        rows.append(report_row("fused", sets["F"], targets))
        table1.append(EvalReport(config.morph_type, method.value, tuple(rows)))

        method_curves = [(f"{b.short} nm" if b is not SpectralBand.WL else "WL", det_curve(sets[f"S_{b.short}"])) for b in config.bands]
        method_curves.append(("Multispectral (fused)", det_curve(sets["F"])))
        t2_rows = []
        vpath = sdir / f"visible_{method.value}.csv"
        if vpath.exists():
            vis = _read_scores(vpath, ["S_VIS"])["S_VIS"]
            t2_rows.append(report_row("Visible", vis, targets))
            method_curves.append(("Visible", det_curve(vis)))
        t2_rows.append(report_row("Multispectral", sets["F"], targets))
        table2.append(EvalReport(config.morph_type, method.value, tuple(t2_rows)))
        curves[method.value] = method_curves
    return ReportBundle(table1, table2, curves)


def report(config: PipelineConfig, workdir: Path, figures: bool = True) -> Path:
    rdir = workdir / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    bundle = build_reports(config, workdir)
    emit_report(bundle.table1, rdir / "table1.csv", "csv")
    emit_report(bundle.table2, rdir / "table2.csv", "csv")
    emit_report(bundle.table1 + bundle.table2, rdir / "report.json", "json")
    for method, curves in bundle.curves.items():
        emit_det_svg(curves, rdir / f"det_{method}.svg", title=f"DET: {method} ({config.morph_type})")
    if figures:
        from msdmad import plotting

        fig_dir = rdir / "figures"
        fig_dir.mkdir(exist_ok=True)
        for rep in bundle.table1:
            plotting.plot_band_deer(rep, fig_dir / f"deer_bands_{rep.mad_algorithm}.png")
        for method, curves in bundle.curves.items():
            plotting.plot_det(curves, fig_dir / f"det_{method}.png", title=method)
    return rdir


def fusion_summary(rep: EvalReport) -> dict:
    """Fused D-EER against the single-band median, as fractions."""
    bands = [r.d_eer for r in rep.rows if r.band != "fused"]
    fused = next(r.d_eer for r in rep.rows if r.band == "fused")
    return {"fused": fused, "median_band": median(bands), "best_band": min(bands)}


def run(config: PipelineConfig, workdir: Path, figures: bool = True) -> Path:
    workdir.mkdir(parents=True, exist_ok=True)
    store = prepare_store(config, workdir)
    extract(config, workdir, store)
    blocks = load_features(workdir, store)
    train(config, workdir, blocks)
    evaluate(config, workdir, blocks)
    return report(config, workdir, figures)


# --- morph generation over a manifest ----------------------------------------------


def gen_morphs(
    manifest_path: Path,
    split: ProtocolSplit,
    side: Side,
    spec,
    max_pairs: Optional[int],
    seed: int,
    out: Path,
) -> tuple[Path, list[Path]]:
    """Morph every selected within-side pair and write an extended manifest to ``out``.

    The first Session1 bona fide image of each subject (by path) is its
    morphing source. The input manifest is never modified.
    """
    import os

    from msdmad.morph import generate_morph, morph_filename, read_landmarks, write_image
    from msdmad.protocol import SampleRecord, enumerate_morph_pairs, save_manifest

    manifest = load_manifest(manifest_path)
    root = Path(manifest_path).parent
    sources: dict[str, object] = {}
    for rec in sorted(manifest.samples, key=lambda r: r.image_path):
        if rec.session is SessionId.SESSION1 and rec.label is Label.BONA_FIDE:
            sources.setdefault(rec.subject_id, rec)
    pairs = enumerate_morph_pairs(split, side, max_pairs, seed)
    if not pairs:
        logger.warning("no morph pairs selected; nothing to generate")
    needed = sorted({s for p in pairs for s in p})
    for subject in needed:
        rec = sources.get(subject)
        if rec is None:
            raise DataError(f"subject {subject!r} has no Session1 bona fide image")
        if rec.landmarks_path is None:
            raise DataError(f"sample {rec.image_path!r} (subject {subject!r}) has no landmarks_path")

    out.mkdir(parents=True, exist_ok=True)
    written, new_records = [], []
    for a, b in pairs:
        ra, rb = sources[a], sources[b]
        img = generate_morph(
            read_image(root / ra.image_path),
            read_landmarks(root / ra.landmarks_path),
            read_image(root / rb.image_path),
            read_landmarks(root / rb.landmarks_path),
            spec,
        )
        name = morph_filename(a, b, spec.alpha)
        write_image(img, out / name)
        written.append(out / name)
        new_records.append(SampleRecord(f"morph_{a}_{b}", SessionId.SESSION1, Label.MORPH, name, morph_parents=(a, b)))

    def rebase(p: Optional[str]) -> Optional[str]:
        if p is None:
            return None
        return Path(os.path.relpath(root / p, out)).as_posix()

    kept = [
        SampleRecord(r.subject_id, r.session, r.label, rebase(r.image_path), r.band, r.morph_parents, rebase(r.landmarks_path))
        for r in manifest.samples
    ]
    updated = DatasetManifest(tuple(kept + new_records))
    updated.validate()
    save_manifest(updated, out / "manifest.json")
    return out / "manifest.json", written
