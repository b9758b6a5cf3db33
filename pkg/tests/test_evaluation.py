import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from primpose.errors import EmptyList
from primpose.evaluation import (
    DEFAULT_GRIDS,
    InstanceMetrics,
    MetricsReport,
    OrientedBox,
    align_about_axis,
    ap_curves,
    average_precision,
    chamfer,
    chamfer_brute_force,
    instance_metrics,
    iou3d,
    pose_error,
    rotation_error_deg,
    write_curves_csv,
)
from primpose.geometry import Sim3Transform, axis_angle_matrix, random_rotation
from primpose.primitives import PrimitiveSet
from primpose.shapes import AXIAL_SYMMETRY, NO_SYMMETRY

I = Sim3Transform.identity()


def box(t=(0, 0, 0), R=np.eye(3), ext=(1, 1, 1), s=1.0):
    return OrientedBox(Sim3Transform(s, R, t), ext)


def test_iou_analytic_cases():
    assert iou3d(box(), box()) == 1.0
    assert iou3d(box(), box(t=(2, 0, 0))) == 0.0
    assert iou3d(box(), box(t=(0.5, 0, 0))) == pytest.approx(1 / 3, abs=0.01)
    # a half-size box inside a unit box: 1/8
    assert iou3d(box(), box(ext=(0.5, 0.5, 0.5))) == pytest.approx(1 / 8, abs=0.01)
    with pytest.raises(ValueError):
        box(ext=(1, 0, 1))


def test_iou_symmetric_in_arguments(rng):
    for _ in range(10):
        a = box(rng.uniform(-0.3, 0.3, 3), random_rotation(rng), rng.uniform(0.3, 1, 3))
        b = box(rng.uniform(-0.3, 0.3, 3), random_rotation(rng), rng.uniform(0.3, 1, 3))
        assert abs(iou3d(a, b) - iou3d(b, a)) <= 0.01


def test_pose_error_examples(rng):
    R = random_rotation(rng)
    gt = Sim3Transform(0.2, R, [1, 2, 3])
    assert pose_error(gt, gt, NO_SYMMETRY) == (0.0, 0.0, 1.0)
    axis = np.array(AXIAL_SYMMETRY.axis, float)
    for deg in (60, 37.5, 180):
        spun = Sim3Transform(0.2, R @ axis_angle_matrix(axis, np.radians(deg)), [1, 2, 3])
        assert pose_error(spun, gt, AXIAL_SYMMETRY)[0] <= 1e-6
        assert pose_error(spun, gt, NO_SYMMETRY)[0] == pytest.approx(deg, abs=1e-6)
    perp = np.cross(axis, [1, 0, 0])
    tilted = Sim3Transform(0.3, R @ axis_angle_matrix(perp, np.radians(10)), [1, 2, 3.05])
    rot, trans, ratio = pose_error(tilted, gt, AXIAL_SYMMETRY)
    assert rot == pytest.approx(10.0, abs=1e-6)
    assert trans == pytest.approx(0.05, abs=1e-12) and ratio == pytest.approx(1.5)


def test_rotation_error_invariant_under_common_world_rotation(rng):
    for sym in (NO_SYMMETRY, AXIAL_SYMMETRY):
        for _ in range(20):
            A, B, W = random_rotation(rng), random_rotation(rng), random_rotation(rng)
            assert rotation_error_deg(W @ A, W @ B, sym) == pytest.approx(rotation_error_deg(A, B, sym), abs=1e-9)


def test_align_about_axis_is_optimal(rng):
    axis = np.array(AXIAL_SYMMETRY.axis, float)
    for _ in range(10):
        A, B = random_rotation(rng), random_rotation(rng)
        Ra = align_about_axis(A, B, AXIAL_SYMMETRY)
        assert np.allclose(Ra @ axis, A @ axis, atol=1e-12)
        # brute-force spin search cannot beat the closed form
        best = max(np.trace(B.T @ A @ axis_angle_matrix(axis, p)) for p in np.linspace(0, 2 * np.pi, 3601))
        assert np.trace(B.T @ Ra) >= best - 1e-9
    assert np.array_equal(align_about_axis(A, B, NO_SYMMETRY), A)


def test_average_precision_examples():
    assert average_precision([(3, 0.02), (7, 0.02)], 5, 0.02) == 0.5
    assert average_precision([(0, 0)] * 4, 5, 0.02) == 1.0
    with pytest.raises(EmptyList):
        average_precision([], 5, 0.02)


@given(st.lists(st.tuples(st.floats(0, 90), st.floats(0, 0.2)), min_size=1, max_size=40))
@settings(max_examples=50, deadline=None)
def test_average_precision_monotone(errors):
    grid = np.linspace(0, 90, 31)
    ap = [average_precision(errors, r, 0.1) for r in grid]
    assert np.all(np.diff(ap) >= 0)
    ap = [average_precision(errors, 10, t) for t in np.linspace(0, 0.2, 21)]
    assert np.all(np.diff(ap) >= 0)


def test_chamfer_examples(rng):
    A = rng.normal(size=(30, 3))
    assert chamfer(A, A) == 0.0
    assert chamfer([[0, 0, 0]], [[0.1, 0, 0]]) == pytest.approx(0.02, abs=1e-15)
    with pytest.raises(EmptyList):
        chamfer(np.zeros((0, 3)), A)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_chamfer_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(100, 3)), rng.normal(size=(100, 3)) + 0.3
    c = chamfer(A, B)
    assert abs(c - chamfer_brute_force(A, B)) <= 1e-12
    assert c == chamfer(B, A) and c > 0


def metric(cat, rot, trans, iou, i=0):
    return InstanceMetrics(f"{cat}{i}", cat, rot, trans, 1.0, iou, 0.001, 0.3)


def test_ap_curves_perfect_instance():
    rows = ap_curves([metric("can", 0.0, 0.0, 1.0)])
    assert {r[3] for r in rows} == {1.0}
    assert {r[1] for r in rows} == {"can", "all"}


def test_ap_curves_monotone_and_pointwise(rng):
    ms = [metric(c, rng.uniform(0, 40), rng.uniform(0, 0.1), rng.uniform(0, 1), i)
          for i, c in enumerate(rng.choice(["can", "mug", "bowl"], 60))]
    rows = ap_curves(ms)
    for cat in ("can", "mug", "bowl", "all"):
        sub = [m for m in ms if cat in ("all", m.category)]
        for metric_name in ("iou", "rotation_deg", "translation_cm"):
            curve = [(t, ap) for t, c, k, ap in rows if c == cat and k == metric_name]
            assert [t for t, _ in curve] == list(DEFAULT_GRIDS[metric_name])
            ap = np.array([a for _, a in curve])
            if metric_name == "iou":
                # fraction with IoU at or above the threshold shrinks as it rises
                assert np.all(np.diff(ap) <= 0)
            else:
                assert np.all(np.diff(ap) >= 0)
            E = [(m.rot_deg, m.trans_m) for m in sub]
            for t, a in curve[::7]:
                if metric_name == "rotation_deg":
                    assert a == average_precision(E, t, np.inf)
                elif metric_name == "translation_cm":
                    assert a == average_precision(E, np.inf, t / 100)
                else:
                    assert a == np.mean([m.iou >= t for m in sub])
    with pytest.raises(EmptyList):
        ap_curves([])


def test_curves_csv(tmp_path):
    rows = ap_curves([metric("can", 1.0, 0.01, 0.8)])
    write_curves_csv(rows, tmp_path / "c.csv")
    back = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert list(back[0]) == ["threshold", "category", "metric", "ap"] and len(back) == len(rows)


def test_report_summary_and_csv(tmp_path):
    rep = MetricsReport([metric("can", 3, 0.01, 0.9), metric("can", 7, 0.04, 0.6, 1)])
    s = rep.summary()
    assert s["5deg_2cm"] == 0.5 and s["10deg_5cm"] == 1.0 and s["IoU75"] == 0.5 and s["IoU50"] == 1.0
    assert s["n"] == 2
    rep.write_csv(tmp_path / "m.csv")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert float(rows[1]["rot_deg"]) == 7.0
    assert {"id", "rot_deg", "trans_m", "scale_ratio", "iou", "chamfer"} <= set(rows[0])
    with pytest.raises(EmptyList):
        MetricsReport([]).summary()


def test_instance_metrics_perfect_and_spun(rng):
    ps = PrimitiveSet(rng.uniform(-0.4, 0.4, (10, 3)), np.full(10, 0.05))
    gt = Sim3Transform(0.25, random_rotation(rng), [0.1, 0, 0.3])
    m = instance_metrics("a", "can", gt, gt, ps, ps, AXIAL_SYMMETRY, 0.25)
    assert m.rot_deg == 0 and m.trans_m == 0 and m.iou == 1.0 and m.chamfer == 0
    # a lathe box spun about its axis scores like the unspun one
    axis = np.array(AXIAL_SYMMETRY.axis, float)
    spun = Sim3Transform(gt.s, gt.R @ axis_angle_matrix(axis, 0.7), gt.t)
    m = instance_metrics("a", "can", spun, gt, ps, ps, AXIAL_SYMMETRY, 0.25)
    assert m.rot_deg <= 1e-6 and m.iou >= 0.99
