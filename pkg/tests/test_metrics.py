
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sweep, sweep_bpcer_at_apcer, sweep_d_eer
from msdmad.errors import EmptyClass
from msdmad.metrics import (
    EvalReport,
    ReportRow,
    ScoreSet,
    apcer_at,
    bpcer_at,
    bpcer_at_apcer,
    d_eer,
    det_curve,
    det_svg,
    emit_det_svg,
    emit_report,
    load_report_json,
    operating_point,
    report_row,
)


def S(bona, attack):
    return ScoreSet(np.array(bona, float), np.array(attack, float))


def test_apcer_bpcer_examples():
    assert apcer_at(S([0], [0.9, 0.8]), 0.5) == 0.0
    assert apcer_at(S([0], [0.1, 0.9]), 0.5) == 0.5
    assert apcer_at(S([0], [0.5]), 0.5) == 0.0
    assert bpcer_at(S([0.1, 0.2], [1]), 0.5) == 0.0
    assert bpcer_at(S([0.6, 0.4], [1]), 0.5) == 0.5
    assert bpcer_at(S([0.5], [1]), 0.5) == 1.0


def test_det_examples():
    assert any(p.apcer == 0 and p.bpcer == 0 for p in det_curve(S([0.1], [0.9])))
    assert not any(p.apcer == 0 and p.bpcer == 0 for p in det_curve(S([0.5], [0.5])))


def test_d_eer_examples():
    assert d_eer(S([0.1, 0.2, 0.3, 0.4], [0.6, 0.7, 0.8, 0.9])) == 0.0
    assert d_eer(S([0.2, 0.3, 0.8], [0.5, 0.7, 0.9])) == pytest.approx(1 / 3, abs=1e-15)
    vals = np.random.default_rng(0).uniform(size=10)
    assert abs(d_eer(S(vals, vals)) - 0.5) <= 0.1


def test_bpcer_at_apcer_examples():
    assert bpcer_at_apcer(S([0.1, 0.2], [0.8, 0.9]), 0.05) == 0.0
    s = S([0.2, 0.3, 0.8], [0.5, 0.7, 0.9])
    op = operating_point(s, 0.10)
    assert op.attained and op.threshold == 0.5 and op.apcer == 0.0
    assert op.bpcer == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        operating_point(s, 0.0)


def test_empty_classes():
    with pytest.raises(EmptyClass):
        d_eer(S([], [0.1]))
    with pytest.raises(EmptyClass):
        apcer_at(S([0.1], []), 0.5)
    with pytest.raises(ValueError):
        S([float("nan")], [0.1])


def _oracle_check(bona, attack):
    s = S(bona, attack)
    got = [(p.threshold, p.apcer, p.bpcer) for p in det_curve(s)]
    ref = sweep(bona, attack)
    assert len(got) == len(ref)
    for (t, a, b), (rt, ra, rb) in zip(got, ref):
        assert t == rt and abs(a - ra) <= 1e-12 and abs(b - rb) <= 1e-12
    assert abs(d_eer(s) - sweep_d_eer(bona, attack)) <= 1e-12
    for target in (0.05, 0.10):
        assert abs(bpcer_at_apcer(s, target) - sweep_bpcer_at_apcer(bona, attack, target)) <= 1e-12


def test_oracle_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(200):
        nb, na = rng.integers(5, 51, 2)
        bona = rng.normal(0.4, 0.2, nb)
        attack = rng.normal(0.6, 0.2, na)
        if rng.uniform() < 0.5:  # heavy ties
            bona, attack = np.round(bona, 1), np.round(attack, 1)
        _oracle_check(bona, attack)


def test_oracle_hundred_per_class():
    rng = np.random.default_rng(8)
    _oracle_check(rng.uniform(size=100), rng.uniform(0.2, 1.2, 100))


# dyadic grid: x -> 2x + 1 stays exact, hence strictly monotone, in float64
scores_list = st.lists(st.integers(-(10**6), 10**6).map(lambda k: k / 1024), min_size=1, max_size=40)


@settings(max_examples=300, deadline=None)
@given(bona=scores_list, attack=scores_list)
def test_metric_invariants(bona, attack):
    s = S(bona, attack)
    pts = det_curve(s)
    assert all(0 <= p.apcer <= 1 and 0 <= p.bpcer <= 1 for p in pts)
    assert all(p.threshold > q.threshold for p, q in zip(pts, pts[1:]))
    # thresholds descend, so fewer attacks fall below and more bona fide reach them
    assert all(p.apcer >= q.apcer and p.bpcer <= q.bpcer for p, q in zip(pts, pts[1:]))
    assert (pts[0].apcer, pts[0].bpcer, pts[-1].apcer, pts[-1].bpcer) == (1.0, 0.0, 0.0, 1.0)
    step = 1.0 / min(len(bona), len(attack))
    # a worse-than-chance detector can exceed 0.5; flipping its sign cannot
    flipped = S(-np.array(bona), -np.array(attack))
    assert 0 <= d_eer(s) <= 1
    assert min(d_eer(s), d_eer(flipped)) <= 0.5 + step
    t = S(2 * np.array(bona) + 1, 2 * np.array(attack) + 1)
    assert d_eer(t) == d_eer(s)
    for target in (0.05, 0.1):
        assert bpcer_at_apcer(t, target) == bpcer_at_apcer(s, target)


def test_report_csv_and_json(tmp_path):
    rep = EvalReport("FaceMorpher", "DiffFeature", (ReportRow("WL", 0.29608, 0.5, 0.123456),))
    text = emit_report(rep, tmp_path / "r.csv").read_text()
    lines = text.splitlines()
    assert len(lines) == 2
    assert lines[1] == "FaceMorpher,DiffFeature,WL,29.61,50.00,12.35"
    emit_report(rep, tmp_path / "r.json", "json")
    assert load_report_json(tmp_path / "r.json") == rep
    emit_report([rep, rep], tmp_path / "both.json", "json")
    assert load_report_json(tmp_path / "both.json") == [rep, rep]
    with pytest.raises(ValueError):
        emit_report(rep, tmp_path / "r.txt", "xml")


def test_report_row_fields():
    s = S([0.2, 0.3, 0.8], [0.5, 0.7, 0.9])
    row = report_row("650", s)
    assert row == ReportRow("650", d_eer(s), bpcer_at_apcer(s, 0.05), bpcer_at_apcer(s, 0.10))


def _polylines(svg):
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg)
    ns = {"s": "http://www.w3.org/2000/svg"}
    return root, root.findall(".//s:polyline", ns), ns


def test_svg_separable_curve_reaches_origin_corner():
    svg = det_svg([("sep", det_curve(S([0.1, 0.2], [0.8, 0.9])))], "t")
    root, lines, _ = _polylines(svg)
    assert len(lines) == 1
    pts = [tuple(map(float, p.split(","))) for p in lines[0].get("points").split()]
    # zero error rates are clamped to the lower-left plot corner
    assert min(x for x, _ in pts) == pytest.approx(110.0) and max(y for _, y in pts) == pytest.approx(690.0)
    assert any(x == pytest.approx(110.0) and y == pytest.approx(690.0) for x, y in pts)


def test_svg_two_curves_legend_order_and_determinism(tmp_path):
    rng = np.random.default_rng(1)
    curves = [
        ("first <a>", det_curve(S(rng.uniform(size=20), rng.uniform(size=20)))),
        ("second", det_curve(S(rng.uniform(size=20), rng.uniform(0.3, 1, 20)))),
    ]
    svg = det_svg(curves, "two")
    root, lines, ns = _polylines(svg)
    assert [p.get("data-label") for p in lines] == ["first <a>", "second"]
    legend = root.findall(".//s:g[@class='legend-entry']", ns)
    assert ["".join(g.itertext()).strip() for g in legend] == ["first <a>", "second"]
    a = emit_det_svg(curves, tmp_path / "a.svg", "two").read_bytes()
    b = emit_det_svg(curves, tmp_path / "b.svg", "two").read_bytes()
    assert a == b
