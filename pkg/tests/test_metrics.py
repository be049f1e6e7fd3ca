import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from implicit_sampling.fields import OCC, SDF, UDF, Sphere
from implicit_sampling.mesh import TriangleMesh, icosphere
from implicit_sampling.metrics import (
    CHAMFER,
    FSCORE,
    IOU,
    NORMALS,
    ORIENTATION,
    DScoreInput,
    IncompleteTableError,
    MetricError,
    MetricsReport,
    chamfer_l2,
    d_score,
    d_score_csv,
    d_score_table,
    f_score,
    f_score_parts,
    iou,
    normal_consistency,
    occupancy_from_values,
    shape_occupancy,
)


def brute_nn(A, B):
    return np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)).min(axis=1)


# -- IoU -----------------------------------------------------------------------------


def test_iou_basic():
    a = np.zeros((4, 4, 4), bool)
    a[:2] = True
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    assert iou(np.zeros_like(a), np.zeros_like(a)) == 1.0
    with pytest.raises(MetricError):
        iou(a, np.zeros((4, 4, 5), bool))


def test_iou_of_offset_spheres_matches_lens_volume():
    R, d = 0.3, 0.2
    A = shape_occupancy(Sphere(R, (-d / 2, 0, 0)), 128)
    B = shape_occupancy(Sphere(R, (d / 2, 0, 0)), 128)
    lens = np.pi * (4 * R + d) * (2 * R - d) ** 2 / 12
    ball = 4 / 3 * np.pi * R**3
    assert iou(A, B) == pytest.approx(lens / (2 * ball - lens), abs=0.01)


def test_occupancy_thresholds():
    assert occupancy_from_values([0.4, 0.6], OCC).tolist() == [False, True]
    assert occupancy_from_values([-0.1, 0.1], SDF).tolist() == [True, False]
    with pytest.raises(MetricError):
        occupancy_from_values([0.1], UDF)


# -- point clouds ----------------------------------------------------------------------


def test_chamfer_against_brute_force():
    rng = np.random.default_rng(0)
    A, B = rng.random((300, 3)), rng.random((200, 3))
    expected = 0.5 * (np.mean(brute_nn(A, B) ** 2) + np.mean(brute_nn(B, A) ** 2))
    assert chamfer_l2(A, B) == pytest.approx(expected, abs=1e-12)
    assert chamfer_l2(A, A) == 0.0


def test_chamfer_single_pair():
    assert chamfer_l2([[0, 0, 0]], [[0.3, 0.4, 0]]) == pytest.approx(0.25)
    with pytest.raises(MetricError):
        chamfer_l2(np.zeros((0, 3)), [[0, 0, 0]])


def test_f_score_examples():
    rng = np.random.default_rng(1)
    A = rng.random((500, 3))
    assert f_score(A, A) == 1.0
    assert f_score(A, A + 10 * 0.015 + 1.0) == 0.0
    with pytest.raises(MetricError):
        f_score(A, A, threshold=0.0)


def test_f_score_against_brute_force():
    rng = np.random.default_rng(2)
    gt, pred = rng.random((50, 3)) * 0.1, rng.random((50, 3)) * 0.1
    t = 0.02
    p = np.mean(brute_nn(pred, gt) <= t)
    r = np.mean(brute_nn(gt, pred) <= t)
    parts = f_score_parts(gt, pred, t)
    assert parts.precision == p and parts.recall == r
    assert parts.f == pytest.approx(2 * p * r / (p + r))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60), m=st.integers(1, 60))
def test_point_metric_symmetry(seed, n, m):
    rng = np.random.default_rng(seed)
    A, B = rng.random((n, 3)) * 0.05, rng.random((m, 3)) * 0.05
    assert chamfer_l2(A, B) == pytest.approx(chamfer_l2(B, A), abs=1e-15)
    assert f_score(A, B) == pytest.approx(f_score(B, A), abs=1e-12)
    assert 0.0 <= f_score(A, B) <= 1.0 and chamfer_l2(A, B) >= 0.0


def test_normal_consistency():
    s = icosphere(0.4, 2)
    assert normal_consistency(s, s, n=2000) == pytest.approx(1.0, abs=1e-12)
    plane = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float), np.array([[0, 1, 2], [1, 3, 2]]))
    flipped = TriangleMesh(plane.vertices, plane.triangles[:, ::-1])
    assert normal_consistency(plane, flipped, n=500) == pytest.approx(1.0)
    with pytest.raises(MetricError):
        normal_consistency(s, TriangleMesh.empty())


def test_normal_consistency_orthogonal_planes():
    a = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    b = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 0, 1]], float), np.array([[0, 1, 2]]))
    assert normal_consistency(a, b, n=100) == pytest.approx(0.0, abs=1e-12)


# -- reports and D-Score -----------------------------------------------------------------


def table(scale=1.0):
    r = {
        ("A", IOU): {"S1": 0.90, "S2": 0.80, "S3": 0.70},
        ("B", IOU): {"S1": 0.60, "S2": 0.75, "S3": 0.50},
        ("A", CHAMFER): {"S1": 0.002 * scale, "S2": 0.004 * scale, "S3": 0.003 * scale},
        ("B", CHAMFER): {"S1": 0.010 * scale, "S2": 0.005 * scale, "S3": 0.020 * scale},
    }
    return DScoreInput(r, dict(ORIENTATION))


def test_d_score_worked_example():
    r = {k: {s: v for s, v in row.items() if s != "S3"} for k, row in table().results.items()}
    inp = DScoreInput(r, dict(ORIENTATION))
    assert d_score(inp, "S1") == pytest.approx(0.175)
    assert d_score(inp, "S2") == pytest.approx(11 / 72)


def test_d_score_is_exact_on_rationals():
    from fractions import Fraction

    r = {k: {s: Fraction(str(v)) for s, v in row.items() if s != "S3"} for k, row in table().results.items()}
    inp = DScoreInput(r, dict(ORIENTATION))
    assert d_score(inp, "S1") == Fraction(7, 40)
    assert d_score(inp, "S2") == Fraction(11, 72)


def test_d_score_properties():
    scores = d_score_table(table())
    assert all(v >= 0 for v in scores.values())
    # rescaling a lower-is-better metric leaves every score unchanged
    rescaled = d_score_table(table(scale=7.5))
    for s in scores:
        assert rescaled[s] == pytest.approx(scores[s], abs=1e-12)


def test_d_score_dominant_strategy_is_zero():
    r = {("A", IOU): {"best": 0.9, "other": 0.5}, ("A", CHAMFER): {"best": 0.001, "other": 0.01}}
    assert d_score(DScoreInput(r, dict(ORIENTATION)), "best") == 0.0


def test_d_score_weights():
    inp = table()
    inp.weights = {IOU: 1.0, CHAMFER: 0.0}
    with pytest.raises(MetricError):
        d_score(inp, "S1")
    inp.weights = {IOU: 3.0, CHAMFER: 1.0}
    iou_only = DScoreInput({k: v for k, v in table().results.items() if k[1] == IOU}, dict(ORIENTATION))
    chamfer_only = DScoreInput({k: v for k, v in table().results.items() if k[1] == CHAMFER}, dict(ORIENTATION))
    expected = 0.75 * d_score(iou_only, "S2") + 0.25 * d_score(chamfer_only, "S2")
    assert d_score(inp, "S2") == pytest.approx(expected)


def test_d_score_errors():
    inp = table()
    del inp.results[("B", CHAMFER)]["S3"]
    with pytest.raises(IncompleteTableError):
        d_score(inp, "S1")
    with pytest.raises(IncompleteTableError):
        d_score(table(), "S9")
    zero = DScoreInput({("A", FSCORE): {"S1": 0.0, "S2": 0.0}}, dict(ORIENTATION))
    with pytest.raises(MetricError):
        d_score(zero, "S1")
    with pytest.raises(MetricError):
        d_score(DScoreInput({("A", CHAMFER): {"S1": 0.0, "S2": 0.1}}, dict(ORIENTATION)), "S1")


def test_report_roundtrip_and_dscore():
    rep = MetricsReport()
    for (model, metric), row in table().results.items():
        for s, v in row.items():
            rep.add(model, s, metric, v)
    back = MetricsReport.from_csv(rep.to_csv())
    assert back.entries == rep.entries
    assert d_score_table(DScoreInput.from_report(back)) == d_score_table(table())
    assert d_score_csv({"S1": 0.5}).splitlines() == ["strategy,d_score", "S1,0.500000"]


def test_report_validation():
    rep = MetricsReport()
    rep.add("A", "S1", NORMALS, 0.9)
    with pytest.raises(MetricError):
        rep.add("A", "S1", NORMALS, 0.8)
    with pytest.raises(MetricError):
        rep.add("A", "S1", "mystery", 0.8)
    with pytest.raises(MetricError):
        rep.add("A", "S2", IOU, float("nan"))
    assert rep.value("A", "S1", NORMALS) == 0.9
