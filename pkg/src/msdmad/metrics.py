"""ISO/IEC 30107-3 error rates, DET curves and table-shaped reports.

Scores are oriented so that higher means more attack-like and a sample is
declared an attack when ``score >= threshold``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from msdmad.errors import EmptyClass


@dataclass(frozen=True)
class ScoreSet:
    bona_fide: np.ndarray
    attack: np.ndarray

    def __post_init__(self):
        for name in ("bona_fide", "attack"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} scores contain non-finite values")
            object.__setattr__(self, name, arr)

    def require(self, *, bona: bool = True, attack: bool = True) -> None:
        if bona and self.bona_fide.size == 0:
            raise EmptyClass("no bona fide scores")
        if attack and self.attack.size == 0:
            raise EmptyClass("no attack scores")


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    apcer: float
    bpcer: float


def apcer_at(scores: ScoreSet, threshold: float) -> float:
    """Fraction of attacks scoring strictly below the threshold."""
    scores.require(bona=False)
    return float(np.count_nonzero(scores.attack < threshold)) / scores.attack.size


def bpcer_at(scores: ScoreSet, threshold: float) -> float:
    """Fraction of bona fide samples scoring at or above the threshold."""
    scores.require(attack=False)
    return float(np.count_nonzero(scores.bona_fide >= threshold)) / scores.bona_fide.size


def det_curve(scores: ScoreSet) -> list[DetPoint]:
    """Error rates at every distinct score plus the +/-inf sentinels, threshold descending."""
    scores.require()
    att = np.sort(scores.attack)
    bona = np.sort(scores.bona_fide)
    thr = np.unique(np.concatenate([att, bona]))[::-1]
    thr = np.concatenate([[np.inf], thr, [-np.inf]])
    apcer = np.searchsorted(att, thr, side="left") / att.size
    bpcer = (bona.size - np.searchsorted(bona, thr, side="left")) / bona.size
    return [DetPoint(float(t), float(a), float(b)) for t, a, b in zip(thr, apcer, bpcer)]


def _curve_arrays(scores: ScoreSet):
    pts = det_curve(scores)
    return (
        np.array([p.threshold for p in pts]),
        np.array([p.apcer for p in pts]),
        np.array([p.bpcer for p in pts]),
    )


def eer_point(scores: ScoreSet) -> DetPoint:
    """Curve point where APCER and BPCER are closest (ties: lower mean, then higher threshold)."""
    thr, a, b = _curve_arrays(scores)
    gap = np.abs(a - b)
    mean = (a + b) / 2.0
    order = np.lexsort((mean, gap))  # primary key gap, then mean; stable keeps descending thresholds
    i = int(order[0])
    return DetPoint(float(thr[i]), float(a[i]), float(b[i]))


def d_eer(scores: ScoreSet) -> float:
    p = eer_point(scores)
    return (p.apcer + p.bpcer) / 2.0


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    apcer: float
    bpcer: float
    attained: bool


def operating_point(scores: ScoreSet, target_apcer: float) -> OperatingPoint:
    """Highest threshold whose APCER does not exceed the target.

    Among thresholds that let at most ``target_apcer`` of the attacks through,
    the highest one has the lowest BPCER. If no threshold qualifies, the point
    with the smallest APCER is returned with ``attained=False``.
    """
    if not 0.0 < target_apcer < 1.0:
        raise ValueError("target APCER must lie in (0, 1)")
    thr, a, b = _curve_arrays(scores)
    ok = np.nonzero(a <= target_apcer)[0]
    if ok.size:
        i = int(ok[0])  # thresholds are descending
        return OperatingPoint(float(thr[i]), float(a[i]), float(b[i]), True)
    i = int(np.argmin(a))
    return OperatingPoint(float(thr[i]), float(a[i]), float(b[i]), False)


def bpcer_at_apcer(scores: ScoreSet, target_apcer: float) -> float:
    return operating_point(scores, target_apcer).bpcer


@dataclass(frozen=True)
class ReportRow:
    band: str
    d_eer: float
    bpcer_at_apcer5: float
    bpcer_at_apcer10: float


@dataclass(frozen=True)
class EvalReport:
    morph_type: str
    mad_algorithm: str
    rows: tuple[ReportRow, ...] = field(default_factory=tuple)


def report_row(band: str, scores: ScoreSet, targets: tuple[float, float] = (0.05, 0.10)) -> ReportRow:
    return ReportRow(
        band, d_eer(scores), bpcer_at_apcer(scores, targets[0]), bpcer_at_apcer(scores, targets[1])
    )


REPORT_COLUMNS = (
    "morph_type",
    "mad_algorithm",
    "band",
    "d_eer_pct",
    "bpcer_at_apcer5_pct",
    "bpcer_at_apcer10_pct",
)


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def report_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for rep in reports:
        for row in rep.rows:
            writer.writerow(
                [
                    rep.morph_type,
                    rep.mad_algorithm,
                    row.band,
                    _pct(row.d_eer),
                    _pct(row.bpcer_at_apcer5),
                    _pct(row.bpcer_at_apcer10),
                ]
            )
    return buf.getvalue()


def report_to_dict(report: EvalReport) -> dict:
    return asdict(report)


def report_from_dict(doc: dict) -> EvalReport:
    return EvalReport(
        doc["morph_type"], doc["mad_algorithm"], tuple(ReportRow(**r) for r in doc["rows"])
    )


def emit_report(report, path: str | Path, fmt: str = "csv") -> Path:
    """Write one report (or a list of reports) as CSV or JSON."""
    reports = [report] if isinstance(report, EvalReport) else list(report)
    path = Path(path)
    if fmt.lower() == "csv":
        text = report_csv(reports)
    elif fmt.lower() == "json":
        docs = [report_to_dict(r) for r in reports]
        text = json.dumps(docs[0] if isinstance(report, EvalReport) else docs, indent=2) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(text, encoding="utf-8")
    return path


def load_report_json(path: str | Path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, list):
        return [report_from_dict(d) for d in doc]
    return report_from_dict(doc)


# --- DET plot as standalone SVG -------------------------------------------

SVG_SIZE = 800
_LEFT, _RIGHT, _TOP, _BOTTOM = 110, 770, 40, 690
_LOG_MIN, _LOG_MAX = -1.0, 2.0  # 0.1 % .. 100 %
_TICKS = (0.1, 0.2, 0.5, 1, 2, 5, 10, 20, 50, 100)
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#7f7f7f")


def _axis(pct: float, lo: float, hi: float) -> float:
    v = math.log10(min(max(pct, 10**_LOG_MIN), 10**_LOG_MAX))
    return lo + (v - _LOG_MIN) / (_LOG_MAX - _LOG_MIN) * (hi - lo)


def det_svg(curves: Sequence[tuple[str, Sequence[DetPoint]]], title: str = "") -> str:
    """Render DET curves with log-scaled APCER (x) and BPCER (y) axes in percent.

    Rates below 0.1 % are drawn on the 0.1 % axis line.
    """
    if not curves:
        raise ValueError("need at least one curve")
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}" font-family="sans-serif" font-size="14">',
        f'<rect x="0" y="0" width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{(_LEFT + _RIGHT) / 2:.2f}" y="24" text-anchor="middle">{_escape(title)}</text>')
    out.append('<g class="grid" stroke="#dddddd" stroke-width="1">')
    for t in _TICKS:
        x = _axis(t, _LEFT, _RIGHT)
        y = _axis(t, _BOTTOM, _TOP)
        out.append(f'<line x1="{x:.2f}" y1="{_TOP}" x2="{x:.2f}" y2="{_BOTTOM}"/>')
        out.append(f'<line x1="{_LEFT}" y1="{y:.2f}" x2="{_RIGHT}" y2="{y:.2f}"/>')
    out.append("</g>")
    out.append(
        f'<rect class="frame" x="{_LEFT}" y="{_TOP}" width="{_RIGHT - _LEFT}" '
        f'height="{_BOTTOM - _TOP}" fill="none" stroke="black"/>'
    )
    for t in _TICKS:
        label = f"{t:g}"
        out.append(f'<text x="{_axis(t, _LEFT, _RIGHT):.2f}" y="{_BOTTOM + 20}" text-anchor="middle">{label}</text>')
        out.append(f'<text x="{_LEFT - 8}" y="{_axis(t, _BOTTOM, _TOP) + 5:.2f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{(_LEFT + _RIGHT) / 2:.2f}" y="{_BOTTOM + 50}" text-anchor="middle">APCER (%)</text>')
    out.append(
        f'<text x="30" y="{(_TOP + _BOTTOM) / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 30 {(_TOP + _BOTTOM) / 2:.2f})">BPCER (%)</text>'
    )
    for k, (label, points) in enumerate(curves):
        color = _PALETTE[k % len(_PALETTE)]
        coords = " ".join(
            f"{_axis(100 * p.apcer, _LEFT, _RIGHT):.2f},{_axis(100 * p.bpcer, _BOTTOM, _TOP):.2f}" for p in points
        )
        out.append(
            f'<polyline class="det" data-label="{_escape(label)}" fill="none" stroke="{color}" '
            f'stroke-width="2" points="{coords}"/>'
        )
    ly = _TOP + 20
    for k, (label, _) in enumerate(curves):
        color = _PALETTE[k % len(_PALETTE)]
        y = ly + 22 * k
        out.append(f'<g class="legend-entry"><line x1="{_RIGHT - 200}" y1="{y}" x2="{_RIGHT - 170}" y2="{y}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{_RIGHT - 162}" y="{y + 5}">{_escape(label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def emit_det_svg(curves: Sequence[tuple[str, Sequence[DetPoint]]], path: str | Path, title: str = "") -> Path:
    path = Path(path)
    path.write_text(det_svg(curves, title), encoding="utf-8")
    return path
