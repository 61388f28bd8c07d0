"""Matplotlib renderings of evaluation results (PNG files next to the CSV tables)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from msdmad.metrics import DetPoint, EvalReport  # noqa: E402

_RC = {
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.4,
    "savefig.dpi": 120,
    "svg.hashsalt": "msdmad",
}
_FLOOR = 0.1  # percent; zero rates are drawn on the axis floor


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_det(curves: Sequence[tuple[str, Sequence[DetPoint]]], path: str | Path, title: str = "") -> Path:
    """DET curves on log-log percent axes."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 5.5))
        for label, points in curves:
            x = [max(100 * p.apcer, _FLOOR) for p in points]
            y = [max(100 * p.bpcer, _FLOOR) for p in points]
            ax.plot(x, y, label=label, linewidth=1.5)
        ax.plot([_FLOOR, 100], [_FLOOR, 100], color="0.6", linestyle=":", linewidth=1)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlim(_FLOOR, 100)
        ax.set_ylim(_FLOOR, 100)
        ax.set_xlabel("APCER (%)")
        ax.set_ylabel("BPCER (%)")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower left", fontsize=8)
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_band_deer(report: EvalReport, path: str | Path) -> Path:
    """Bar chart of D-EER per spectral band, with the fused value as a reference line."""
    bands = [r for r in report.rows if r.band != "fused"]
    fused = [r for r in report.rows if r.band == "fused"]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        names = [r.band for r in bands]
        values = [100 * r.d_eer for r in bands]
        bars = ax.bar(names, values, color="#4c72b0")
        ax.bar_label(bars, fmt="%.2f", fontsize=8)
        if fused:
            ax.axhline(100 * fused[0].d_eer, color="#c44e52", linestyle="--", label=f"fused {100 * fused[0].d_eer:.2f}")
            ax.legend(fontsize=8)
        ax.set_xlabel("Spectral band")
        ax.set_ylabel("D-EER (%)")
        ax.set_title(f"{report.mad_algorithm} ({report.morph_type})")
        fig.tight_layout()
        return _save(fig, Path(path))
