import csv
import hashlib
import json
import logging
import subprocess
import sys
from pathlib import Path

import pytest

from msdmad.cli import main
from msdmad.protocol import Label, load_manifest
from msdmad.store import EmbeddingStore

SMALL = "[synthetic]\nn_subjects = 10\ntrusted_per_subject = 2\n"


def _digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_gen_morphs_three_subjects(image_dataset, tmp_path, capsys):
    manifest, split = image_dataset
    before = manifest.read_bytes()
    out = tmp_path / "morphs"
    code = main(["gen-morphs", "--manifest", str(manifest), "--split", str(split), "--side", "train", "--out", str(out)])
    assert code == 0
    pngs = sorted(p.name for p in out.glob("*.png"))
    assert pngs == ["morph_A_B_a50.png", "morph_A_C_a50.png", "morph_B_C_a50.png"]
    assert manifest.read_bytes() == before
    updated = load_manifest(out / "manifest.json")
    morphs = [s for s in updated.samples if s.label is Label.MORPH]
    assert {s.morph_parents for s in morphs} == {("A", "B"), ("A", "C"), ("B", "C")}
    for s in updated.samples:
        assert (out / s.image_path).is_file()


def test_gen_morphs_missing_landmarks(image_dataset, tmp_path, capsys):
    manifest, split = image_dataset
    doc = json.loads(manifest.read_text())
    del doc["samples"][1]["landmarks_path"]
    manifest.write_text(json.dumps(doc))
    code = main(["gen-morphs", "--manifest", str(manifest), "--split", str(split), "--side", "train", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "B.png" in capsys.readouterr().err


def test_gen_morphs_zero_pairs(image_dataset, tmp_path, caplog):
    manifest, split = image_dataset
    out = tmp_path / "o"
    with caplog.at_level(logging.WARNING, logger="msdmad"):
        code = main(
            ["gen-morphs", "--manifest", str(manifest), "--split", str(split), "--side", "train", "--max-pairs", "0", "--out", str(out)]
        )
    assert code == 0
    assert list(out.glob("*.png")) == []
    assert any(r.levelno == logging.WARNING for r in caplog.records)


def test_gen_morphs_bad_inputs_exit_1(image_dataset, tmp_path):
    manifest, split = image_dataset
    base = ["gen-morphs", "--split", str(split), "--side", "train", "--out", str(tmp_path / "o")]
    assert main(base + ["--manifest", str(tmp_path / "nope.json")]) == 1
    assert main(base + ["--manifest", str(manifest), "--alpha", "2"]) == 1


def test_synth_defaults(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s")]) == 0
    store = EmbeddingStore.load(tmp_path / "s")
    refs = {s.subject_id for s in store.samples if s.role == "reference" and s.label is Label.BONA_FIDE}
    bands = {s.band for s in store.samples if s.band is not None}
    assert len(refs) == 60 and len(bands) == 7


def test_synth_too_few_subjects(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "s"), "--n-subjects", "3"]) == 1
    assert "at least 4" in capsys.readouterr().err


def test_synth_idempotent(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--seed", "42", "--n-subjects", "8", "--out", str(tmp_path / name)]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_run_small_config_rows_and_determinism(tmp_path, small_cfg, capsys):
    for name in ("a", "b"):
        assert main(["run", "--config", str(small_cfg), "--seed", "1", "--no-figures", "--out", str(tmp_path / name)]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("morph_type,mad_algorithm,band,")
    rows = list(csv.DictReader(open(tmp_path / "a/reports/table1.csv")))
    assert len(rows) == 2 * 8
    assert [r["band"] for r in rows if r["band"] == "fused"] == ["fused", "fused"]
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_staged_commands(tmp_path, small_cfg):
    w = str(tmp_path / "w")
    common = ["--config", str(small_cfg), "--out", w]
    assert main(["extract", *common]) == 0
    assert main(["train", *common, "--jobs", "3"]) == 0
    assert main(["eval", *common]) == 0
    assert main(["report", *common, "--no-figures"]) == 0
    assert (tmp_path / "w/reports/table1.csv").is_file()


def test_extract_from_existing_store(tmp_path):
    assert main(["synth", "--n-subjects", "6", "--out", str(tmp_path / "s")]) == 0
    assert main(["extract", "--store", str(tmp_path / "s"), "--out", str(tmp_path / "w")]) == 0
    assert _digest(tmp_path / "s") == _digest(tmp_path / "w/store")


def test_unknown_band_in_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[fusion]\nbands = ["650", "1100"]\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "w")]) == 1


def test_exit_codes(tmp_path, small_cfg):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["run", "--jobs", "x", "--out", str(tmp_path)]) == 1
    assert main(["train", "--out", str(tmp_path / "empty")]) == 2  # no store: data error
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL + "[train]\nlearning_rate = 1e6\nstandardize = false\n")
    assert main(["run", "--config", str(bad), "--no-figures", "--out", str(tmp_path / "w")]) == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "msdmad", "synth", "--n-subjects", "2", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1 and "n_subjects" in proc.stderr
