import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopdet.geometry import Box3D
from coopdet.metrics import (RANGE_BUCKETS, EvalReport, ap_from_matches, average_precision,
                             bev_iou, bucket_of, bucketize, evaluate_frames, in_cube,
                             interpolated_ap, iou3d, match_detections, reports_to_table)
from oracles import monte_carlo_iou, random_box


def square(x=0.0, y=0.0, theta=0.0, z=0.0, h=1.0, side=1.0):
    return Box3D(x, y, z, side, h, side, theta)


# IoU ----------------------------------------------------------------------

def test_iou_examples():
    a = Box3D(1, 2, 0.5, 1.8, 1.5, 4.0, 0.7)
    assert bev_iou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou3d(a, a) == pytest.approx(1.0, abs=1e-12)
    assert bev_iou(square(), square(0.5)) == pytest.approx(1 / 3, abs=1e-12)
    assert iou3d(square(z=0.5), square(z=1.0)) == pytest.approx(1 / 3, abs=1e-12)
    assert bev_iou(square(), square(5)) == 0.0
    assert iou3d(square(z=0), square(z=3)) == 0.0


def test_rotated_square_octagon():
    exact = 2 * (math.sqrt(2) - 1) / (2 - 2 * (math.sqrt(2) - 1))
    assert exact == pytest.approx(0.7071, abs=1e-4)
    rot = square(theta=math.pi / 4)
    assert bev_iou(square(), rot) == pytest.approx(exact, abs=1e-12)
    mc = monte_carlo_iou(square(), rot, 10**6, np.random.default_rng(0), bev=True)
    assert abs(mc - exact) < 1e-2


def test_degenerate_boxes():
    # zero sizes are rejected by Box3D itself; sub-epsilon areas count as empty
    with pytest.raises(ValueError):
        Box3D(0, 0, 0, 0.0, 1, 1, 0)
    flat = Box3D(0, 0, 0, 1e-13, 1, 1, 0)
    assert bev_iou(flat, square()) == 0.0 and iou3d(square(), flat) == 0.0
    thin = Box3D(0, 0, 0, 1, 1e-13, 1, 0)
    assert iou3d(thin, square()) == 0.0


def test_monte_carlo_agreement_on_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = random_box(rng, 1.5), random_box(rng, 1.5)
        assert abs(bev_iou(a, b) - monte_carlo_iou(a, b, 200_000, rng, bev=True)) < 1e-2
        assert abs(iou3d(a, b) - monte_carlo_iou(a, b, 200_000, rng, bev=False)) < 1e-2


@given(st.integers(0, 100_000))
@settings(max_examples=60, deadline=None)
def test_iou_symmetry_periodicity_and_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    a, b = random_box(rng, 2.0), random_box(rng, 2.0)
    for fn in (bev_iou, iou3d):
        v = fn(a, b)
        assert 0.0 <= v <= 1.0
        assert fn(b, a) == pytest.approx(v, abs=1e-9)
        shifted = Box3D(a.x, a.y, a.z, a.w, a.h, a.l, a.theta + 2 * math.pi)
        assert fn(shifted, b) == pytest.approx(v, abs=1e-9)
        phi, t = rng.uniform(-math.pi, math.pi), rng.uniform(-50, 50, 2)
        c, s = math.cos(phi), math.sin(phi)

        def move(box):
            return Box3D(c * box.x - s * box.y + t[0], s * box.x + c * box.y + t[1], box.z,
                         box.w, box.h, box.l, box.theta + phi)

        assert fn(move(a), move(b)) == pytest.approx(v, abs=1e-9)


# matching and AP ----------------------------------------------------------

G1, G2 = square(5, 0), square(15, 0)
FAR = square(60, 60)


def test_single_and_empty_cases():
    assert average_precision([(G1, 0.9)], [G1]) == 1.0
    assert average_precision([], [G1]) == 0.0
    assert average_precision([(G1, 0.9)], []) is None
    assert ap_from_matches(np.zeros(0), np.zeros(0, bool), 0) is None


HAND_CASES = [
    # dets, gts, n_points, hand value
    # TP, FP, TP over 2 GT: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    ([(G1, 0.9), (FAR, 0.8), (G2, 0.7)], [G1, G2], 40, (20 * 1 + 20 * 2 / 3) / 40),
    ([(G1, 0.9), (FAR, 0.8), (G2, 0.7)], [G1, G2], 11, (6 * 1 + 5 * 2 / 3) / 11),
    # one TP, one GT missed: recall tops out at 1/2
    ([(G1, 0.9)], [G1, G2], 40, 20 / 40),
    # FP ranked above the only TP: precision 1/2 at full recall
    ([(FAR, 0.9), (G1, 0.5)], [G1], 40, 0.5),
    # TP, FP, FP, TP over 2 GT: best precision 1 up to r=1/2, then 1/2
    ([(G1, 0.9), (FAR, 0.8), (square(70, 70), 0.7), (G2, 0.6)], [G1, G2], 40, (20 + 20 * 0.5) / 40),
    # duplicate on the same GT counts as FP
    ([(G1, 0.9), (G1, 0.8)], [G1], 40, 1.0),
    ([(G1, 0.8), (FAR, 0.9), (G1, 0.7)], [G1], 11, 0.5),
]


@pytest.mark.parametrize("dets,gts,n_points,expect", HAND_CASES)
def test_hand_computed_pr_curves(dets, gts, n_points, expect):
    assert average_precision(dets, gts, n_points=n_points) == pytest.approx(expect, abs=1e-12)


def test_interpolation_uses_max_precision_to_the_right():
    p = np.array([1.0, 0.5, 0.75])
    r = np.array([0.25, 0.25, 0.75])
    # levels <= 0.25 -> 1.0 (10 of them), up to 0.75 -> 0.75 (20), beyond -> 0 (10)
    assert interpolated_ap(p, r, 40) == pytest.approx((10 + 20 * 0.75) / 40, abs=1e-12)
    with pytest.raises(ValueError):
        interpolated_ap(p, r, 7)


def test_match_ties_keep_input_order_and_prefer_best_overlap():
    a = square(5, 0)
    near = square(5.1, 0)
    scores, tp, matched = match_detections([(near, 0.5), (a, 0.5)], [a])
    assert tp.tolist() == [True, False] and matched.tolist() == [0, -1]
    # a detection between two GTs claims the one it overlaps most
    _, _, m = match_detections([(square(5.2, 0), 0.9)], [square(5.4, 0), square(5.0, 0)], thresh=0.1)
    assert m.tolist() == [0]


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_ap_non_increasing_when_a_match_is_broken(seed):
    rng = np.random.default_rng(seed)
    gts = [square(5 * i, 0) for i in range(int(rng.integers(1, 6)))]
    dets = [(g, float(rng.random())) for g in gts if rng.random() < 0.8]
    dets += [(square(100 + i, 0), float(rng.random())) for i in range(int(rng.integers(0, 4)))]
    if not dets:
        return
    base = average_precision(dets, gts)
    k = int(rng.integers(len(dets)))
    b, s = dets[k]
    worse = list(dets)
    worse[k] = (square(b.x + 0.9, b.y), s)  # IoU 0.1/1.9 < 0.5
    assert average_precision(worse, gts) <= base + 1e-12


# buckets ------------------------------------------------------------------

def test_bucket_examples():
    assert bucket_of(10.0) == ["overall", "0-30m"]
    assert bucket_of(math.hypot(40, 30)) == ["overall", "50-100m"]
    assert bucket_of(30.0) == ["overall", "30-50m"]
    assert bucket_of(100.0) == []


def test_bucket_populations_sum_to_overall():
    rng = np.random.default_rng(2)
    gts = [square(*rng.uniform(-70, 70, 2)) for _ in range(200)]
    dets = [(square(*rng.uniform(-70, 70, 2)), 0.5) for _ in range(150)]
    out = bucketize(gts, dets, bev_iou)
    parts = [k for k in RANGE_BUCKETS if k != "overall"]
    assert sum(len(out[k][0]) for k in parts) == len(out["overall"][0])
    assert sum(len(out[k][1]) for k in parts) == len(out["overall"][1])


def test_matched_detection_follows_its_gt_bucket():
    g = square(29.8, 0)
    d = (square(30.1, 0), 0.9)  # IoU 0.7/1.3 with g, own center in 30-50
    out = bucketize([g], [d], bev_iou)
    assert out["0-30m"][1] == [d] and out["30-50m"][1] == []
    out = bucketize([g], [d])
    assert out["30-50m"][1] == [d]


def test_cube_filter():
    assert in_cube(square(1, 1), (0, -5, -1, 5, 5, 1))
    assert not in_cube(square(6, 1), (0, -5, -1, 5, 5, 1))


# reports --------------------------------------------------------------------

def test_evaluate_frames_and_report_layout():
    frames = [([(G1, 0.9)], [G1]), ([(FAR, 0.8)], [square(40, 0)])]
    rep = evaluate_frames(frames, average_byte=1024.0, label="toy")
    # pooled: TP 0.9, FP 0.8 over 2 GT
    assert rep.ap_bev["overall"] == pytest.approx(0.5)
    assert rep.ap_bev["0-30m"] == 1.0
    assert rep.ap_bev["30-50m"] == 0.0
    assert rep.ap_bev["50-100m"] is None
    row = rep.row()
    assert row["APBEV_overall"] == "50.00" and row["APBEV_50-100m"] == "" and row["AB_bytes"] == "1024.00"
    header = rep.to_csv().splitlines()[0].split(",")
    assert header == ["model"] + [f"AP3D_{k}" for k in RANGE_BUCKETS] + [f"APBEV_{k}" for k in RANGE_BUCKETS] + ["AB_bytes"]
    table = reports_to_table([rep, EvalReport(label="empty")])
    assert "AP_3D (IoU=0.5)" in table and "toy" in table and "1024.00" in table


def test_cube_excludes_objects_outside():
    frames = [([(G1, 0.9), (FAR, 0.9)], [G1, FAR])]
    rep = evaluate_frames(frames, cube=(0, -10, -3, 20, 10, 3))
    assert rep.ap_3d["overall"] == 1.0
