import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import synthetic_face
from msdmad import pipeline
from msdmad.config import PipelineConfig
from msdmad.embeddings import ProviderDescriptor
from msdmad.errors import DataError
from msdmad.features import FeatureMethod
from msdmad.morph import write_image, write_landmarks
from msdmad.protocol import Label, Side, SpectralBand, make_disjoint_split, save_split
from msdmad.store import EmbeddingStore
from msdmad.synthetic import SynthConfig, generate_synthetic_corpus


def small_config(**synth):
    cfg = PipelineConfig().with_overrides(seed=7)
    return replace(cfg, synth=replace(cfg.synth, n_subjects=12, trusted_per_subject=2, **synth))


def test_trial_counts():
    store, split = generate_synthetic_corpus(SynthConfig(n_subjects=10, trusted_per_subject=3))
    for side in Side:
        n = len(split.side(side))
        trials = pipeline.build_trials(store, side, SpectralBand.B770)
        bona = [t for t in trials if t.label is Label.BONA_FIDE]
        morph = [t for t in trials if t.label is Label.MORPH]
        assert len(bona) == 3 * n
        assert len(morph) == math.comb(n, 2) * 2 * 3
        assert all(t.trusted_subject in split.side(side) for t in trials)
        assert trials == bona + morph
    vis = pipeline.build_trials(store, Side.TRAIN, None)
    assert all(store.samples[store.row(t.trusted_id)].band is None for t in vis)


def test_feature_matrix_shapes():
    store, _ = generate_synthetic_corpus(SynthConfig(n_subjects=6, trusted_per_subject=1, dimension=16))
    trials = pipeline.build_trials(store, Side.TEST, SpectralBand.WL)
    cfg = PipelineConfig()
    diff = pipeline.feature_matrix(store, trials, FeatureMethod.DIFF, cfg)
    sl = pipeline.feature_matrix(store, trials, FeatureMethod.SLERP, cfg)
    assert diff.shape == sl.shape == (len(trials), 16)
    assert np.all(diff >= 0)
    np.testing.assert_allclose(np.linalg.norm(sl, axis=1), 1.0, atol=1e-12)
    signed = pipeline.feature_matrix(store, trials, FeatureMethod.DIFF, replace(cfg, absolute_difference=False))
    np.testing.assert_array_equal(np.abs(signed), diff)


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_small_run_outputs(tmp_path):
    cfg = small_config()
    rdir = pipeline.run(cfg, tmp_path / "w", figures=False)
    rows = list(csv.DictReader(open(rdir / "table1.csv")))
    for method in ("DiffFeature", "SlerpFeature"):
        bands = [r["band"] for r in rows if r["mad_algorithm"] == method]
        assert bands == ["650", "710", "770", "830", "890", "950", "WL", "fused"]
    t2 = list(csv.DictReader(open(rdir / "table2.csv")))
    assert [r["band"] for r in t2] == ["Visible", "Multispectral"] * 2
    scores = list(csv.DictReader(open(tmp_path / "w/scores/scores_DiffFeature.csv")))
    assert list(scores[0]) == list(pipeline.SCORE_COLUMNS)
    for r in scores[:50]:
        s = [float(r[f"S_{b.short}"]) for b in SpectralBand]
        assert math.fsum(s) == float(r["F"]) and 0 <= float(r["F"]) <= 7
    thr = json.loads((tmp_path / "w/scores/thresholds.json").read_text())
    assert set(thr) == {"DiffFeature", "SlerpFeature"}
    assert all(r["decision"] == ("Attack" if float(r["F"]) >= thr["DiffFeature"] else "BonaFide") for r in scores)
    svg = (rdir / "det_DiffFeature.svg").read_text()
    assert svg.count("<polyline") == 9  # 7 bands, fused, visible


def test_jobs_do_not_change_results(tmp_path):
    cfg = small_config()
    pipeline.run(replace(cfg, jobs=1), tmp_path / "a", figures=False)
    pipeline.run(replace(cfg, jobs=4), tmp_path / "b", figures=False)
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_band_subset_and_mean_rule(tmp_path):
    bands = (SpectralBand.B650, SpectralBand.B830, SpectralBand.WL)
    cfg = replace(small_config(), bands=bands, fusion_rule="mean", methods=(FeatureMethod.DIFF,))
    rdir = pipeline.run(cfg, tmp_path, figures=False)
    rows = list(csv.DictReader(open(rdir / "table1.csv")))
    assert [r["band"] for r in rows] == ["650", "830", "WL", "fused"]
    scores = list(csv.DictReader(open(tmp_path / "scores/scores_DiffFeature.csv")))
    assert scores[0]["S_710"] == ""
    r = scores[0]
    assert float(r["F"]) == pytest.approx(math.fsum(float(r[f"S_{b.short}"]) for b in bands) / 3, abs=1e-15)


def test_staged_run_matches_one_shot(tmp_path):
    cfg = small_config()
    pipeline.run(cfg, tmp_path / "one", figures=False)
    w = tmp_path / "staged"
    w.mkdir()
    store = pipeline.prepare_store(cfg, w)
    pipeline.extract(cfg, w, store)
    pipeline.train(cfg, w)
    pipeline.evaluate(cfg, w)
    pipeline.report(cfg, w, figures=False)
    assert _tree(tmp_path / "one") == _tree(w)


def test_missing_band_is_data_error(tmp_path):
    store, _ = generate_synthetic_corpus(SynthConfig(n_subjects=6, trusted_per_subject=1))
    keep = [i for i, s in enumerate(store.samples) if s.band is not SpectralBand.B950]
    thin = EmbeddingStore(
        store.dimension,
        store.networks,
        [store.samples[i] for i in keep],
        {n: v[keep] for n, v in store.vectors.items()},
        store.split,
        store.meta,
    )
    with pytest.raises(DataError, match="B950"):
        pipeline.extract(PipelineConfig(), tmp_path, thin)


def test_figures_written(tmp_path):
    rdir = pipeline.run(replace(small_config(), methods=(FeatureMethod.DIFF,)), tmp_path)
    names = sorted(p.name for p in (rdir / "figures").iterdir())
    assert names == ["deer_bands_DiffFeature.png", "det_DiffFeature.png"]
    assert all((rdir / "figures" / n).read_bytes()[:4] == b"\x89PNG" for n in names)


def test_fusion_summary():
    from msdmad.metrics import EvalReport, ReportRow

    rep = EvalReport("m", "a", tuple(ReportRow(b, d, 0, 0) for b, d in (("650", 0.1), ("710", 0.3), ("770", 0.2), ("fused", 0.05))))
    assert pipeline.fusion_summary(rep) == {"fused": 0.05, "median_band": 0.2, "best_band": 0.1}


def build_image_dataset(root: Path, n_subjects: int = 6):
    """Session1 reference, one capture per band and one visible capture per subject."""
    root.mkdir(parents=True)
    samples = []
    for i in range(n_subjects):
        sid = f"P{i}"
        img, pts = synthetic_face(100 + i)
        write_image(img, root / f"{sid}_ref.png")
        write_landmarks(pts, root / f"{sid}_ref.lm")
        samples.append({"subject_id": sid, "session": "Session1", "label": "BonaFide", "image_path": f"{sid}_ref.png", "landmarks_path": f"{sid}_ref.lm"})
        for j, band in enumerate(list(SpectralBand) + [None]):
            cap = np.clip(img.astype(int) + j + 1, 0, 255).astype(np.uint8)
            name = f"{sid}_{band.short if band else 'vis'}.png"
            write_image(cap, root / name)
            rec = {"subject_id": sid, "label": "BonaFide", "image_path": name}
            rec.update({"session": "Multispectral", "band": band.value} if band else {"session": "Session2"})
            samples.append(rec)
    (root / "manifest.json").write_text(json.dumps({"version": 1, "samples": samples}))
    split = make_disjoint_split([f"P{i}" for i in range(n_subjects)], 0.5, 0)
    save_split(split, root / "split.json")
    return root / "manifest.json", root / "split.json", split


def test_image_manifest_route(tmp_path):
    from msdmad.morph import MorphSpec

    manifest, split_path, split = build_image_dataset(tmp_path / "data")
    m1, files1 = pipeline.gen_morphs(manifest, split, Side.TRAIN, MorphSpec(), None, 0, tmp_path / "m1")
    m2, files2 = pipeline.gen_morphs(m1, split, Side.TEST, MorphSpec(), None, 0, tmp_path / "m2")
    assert len(files1) == len(files2) == 3
    providers = {f"net{k}": ProviderDescriptor(f"net{k}", 16, "synthetic", seed=k) for k in range(6)}
    cfg = replace(PipelineConfig(), manifest=m2, split=split_path, providers=providers, morph_type="Landmark")
    cfg.validate()
    rdir = pipeline.run(cfg, tmp_path / "w", figures=False)
    store = EmbeddingStore.load(tmp_path / "w/store")
    assert len([s for s in store.samples if s.label is Label.MORPH]) == 6
    assert store.split == split
    rows = list(csv.DictReader(open(rdir / "table1.csv")))
    assert len(rows) == 16 and rows[0]["morph_type"] == "Landmark"
