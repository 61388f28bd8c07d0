import json
from pathlib import Path

import numpy as np
import pytest

from msdmad.morph import write_image, write_landmarks
from msdmad.protocol import ProtocolSplit, save_split

FACE_SIZE = 64


def synthetic_face(seed: int, size: int = FACE_SIZE):
    """A smooth grayscale 'face' and a jittered 4x4 landmark grid."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = 60 + 1.5 * xx + rng.uniform(0.5, 1.5) * yy
    cx, cy = size / 2 + rng.uniform(-4, 4), size / 2 + rng.uniform(-4, 4)
    img += 50 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * (size / 6) ** 2))
    grid = np.linspace(size * 0.2, size * 0.8, 4)
    gx, gy = np.meshgrid(grid, grid)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1) + rng.uniform(-2.5, 2.5, (16, 2))
    return np.clip(img, 0, 255).astype(np.uint8), pts


@pytest.fixture
def image_dataset(tmp_path: Path):
    """Three subjects, one Session1 image each, with landmarks and a split."""
    root = tmp_path / "data"
    root.mkdir()
    samples = []
    for i, subject in enumerate(("A", "B", "C")):
        img, pts = synthetic_face(i)
        write_image(img, root / f"{subject}.png")
        write_landmarks(pts, root / f"{subject}.lm")
        samples.append(
            {
                "subject_id": subject,
                "session": "Session1",
                "label": "BonaFide",
                "image_path": f"{subject}.png",
                "landmarks_path": f"{subject}.lm",
            }
        )
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"version": 1, "samples": samples}, indent=2))
    split = root / "split.json"
    save_split(ProtocolSplit(frozenset("ABC"), frozenset()), split)
    return manifest, split


# --- acceptance summary --------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, name: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"{'PASS' if ok else 'FAIL'} [{number}] {name}: {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
