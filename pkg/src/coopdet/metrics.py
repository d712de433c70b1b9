"""Rotated-box IoU, range-bucketed average precision, and report assembly."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import Box3D

AREA_EPS = 1e-12

# name -> half-open BEV distance interval in meters
RANGE_BUCKETS: dict[str, tuple[float, float]] = {
    "overall": (0.0, 100.0),
    "0-30m": (0.0, 30.0),
    "30-50m": (30.0, 50.0),
    "50-100m": (50.0, 100.0),
}


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        prev = inp[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in inp:
            side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if side >= 0:
                if prev_side < 0:
                    t = prev_side / (prev_side - side)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif prev_side >= 0:
                t = prev_side / (prev_side - side)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, prev_side = cur, side
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def bev_intersection(a: Box3D, b: Box3D) -> float:
    # cheap rejection on circumscribed circles
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.x - b.x, a.y - b.y) >= ra + rb:
        return 0.0
    area = polygon_area(clip_polygon(a.footprint(), b.footprint()))
    return area if area > AREA_EPS else 0.0


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Intersection over union of the two rotated footprints."""
    area_a, area_b = a.l * a.w, b.l * b.w
    if area_a <= AREA_EPS or area_b <= AREA_EPS:
        return 0.0
    inter = bev_intersection(a, b)
    return inter / (area_a + area_b - inter) if inter > 0 else 0.0


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU for yaw-only boxes: footprint overlap times height overlap."""
    vol_a, vol_b = a.l * a.w * a.h, b.l * b.w * b.h
    if vol_a <= AREA_EPS or vol_b <= AREA_EPS:
        return 0.0
    dz = min(a.z + a.h / 2, b.z + b.h / 2) - max(a.z - a.h / 2, b.z - b.h / 2)
    if dz <= 0:
        return 0.0
    inter = bev_intersection(a, b) * dz
    return inter / (vol_a + vol_b - inter) if inter > 0 else 0.0


IOU_FUNCTIONS: dict[str, Callable[[Box3D, Box3D], float]] = {"3d": iou3d, "bev": bev_iou}

Detection = tuple[Box3D, float]


def match_detections(dets: Sequence[Detection], gts: Sequence[Box3D], iou_fn=bev_iou,
                     thresh: float = 0.5) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Greedy one-to-one matching in descending score order.

    Each detection claims the still-unclaimed ground truth it overlaps most,
    provided that IoU reaches ``thresh``.  Ties in score keep input order.
    Returns ``(scores, is_tp, matched_gt)`` in that processing order, with
    ``matched_gt = -1`` for false positives.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    taken = np.zeros(len(gts), dtype=bool)
    scores = np.array([dets[i][1] for i in order], dtype=np.float64)
    tp = np.zeros(len(order), dtype=bool)
    matched = np.full(len(order), -1, dtype=np.int64)
    for r, i in enumerate(order):
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            iou = iou_fn(dets[i][0], g)
            if iou >= thresh and iou > best:
                best, best_j = iou, j
        if best_j >= 0:
            taken[best_j] = True
            tp[r] = True
            matched[r] = best_j
    return scores, tp, matched


def interpolated_ap(precision: np.ndarray, recall: np.ndarray, n_points: int = 40) -> float:
    """Area under the interpolated PR curve sampled at ``n_points`` recall levels.

    40 points uses recall levels 1/40 ... 1; 11 points uses 0, 0.1 ... 1.
    """
    if n_points == 40:
        levels = np.arange(1, 41) / 40.0
    elif n_points == 11:
        levels = np.linspace(0.0, 1.0, 11)
    else:
        raise ValueError(f"n_points must be 11 or 40, got {n_points}")
    total = 0.0
    for r in levels:
        sel = precision[recall >= r - 1e-12]
        total += sel.max() if sel.size else 0.0
    return total / len(levels)


def ap_from_matches(scores: np.ndarray, tp: np.ndarray, n_gt: int, n_points: int = 40) -> float | None:
    """AP of pooled detections given their TP flags; ``None`` when there is no ground truth."""
    if n_gt == 0:
        return None
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tps = tp[order].astype(np.float64)
    ctp = np.cumsum(tps)
    precision = ctp / np.arange(1, len(tps) + 1)
    recall = ctp / n_gt
    return interpolated_ap(precision, recall, n_points)


def average_precision(dets: Sequence[Detection], gts: Sequence[Box3D], iou_fn=bev_iou,
                      thresh: float = 0.5, n_points: int = 40) -> float | None:
    """Single-frame AP; see :func:`evaluate_frames` for pooling over frames."""
    scores, tp, _ = match_detections(dets, gts, iou_fn, thresh)
    return ap_from_matches(scores, tp, len(gts), n_points)


def bev_range(box: Box3D) -> float:
    return math.hypot(box.x, box.y)


def bucket_of(distance: float) -> list[str]:
    return [name for name, (lo, hi) in RANGE_BUCKETS.items() if lo <= distance < hi]


def bucketize(gts: Sequence[Box3D], dets: Sequence[Detection], iou_fn=None,
              thresh: float = 0.5) -> dict[str, tuple[list[Box3D], list[Detection]]]:
    """Split one frame into range buckets by ground-truth center distance.

    With ``iou_fn`` given, matched detections follow their ground truth's
    bucket; unmatched ones (or all, without ``iou_fn``) use their own center.
    """
    out: dict[str, tuple[list[Box3D], list[Detection]]] = {k: ([], []) for k in RANGE_BUCKETS}
    gt_buckets = [bucket_of(bev_range(g)) for g in gts]
    for g, names in zip(gts, gt_buckets):
        for name in names:
            out[name][0].append(g)
    owner = {}
    if iou_fn is not None:
        order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
        _, _, matched = match_detections(dets, gts, iou_fn, thresh)
        owner = {order[r]: int(j) for r, j in enumerate(matched) if j >= 0}
    for i, det in enumerate(dets):
        names = gt_buckets[owner[i]] if i in owner else bucket_of(bev_range(det[0]))
        for name in names:
            out[name][1].append(det)
    return out


def in_cube(box: Box3D, bounds: Sequence[float]) -> bool:
    return (bounds[0] <= box.x <= bounds[3] and bounds[1] <= box.y <= bounds[4]
            and bounds[2] <= box.z <= bounds[5])


@dataclass
class EvalReport:
    """AP (fractions in [0, 1], ``None`` when a bucket has no ground truth) plus average byte."""

    ap_3d: dict[str, float | None] = field(default_factory=dict)
    ap_bev: dict[str, float | None] = field(default_factory=dict)
    average_byte: float | None = None
    label: str = ""

    COLUMNS = tuple(RANGE_BUCKETS)

    def row(self) -> dict[str, str]:
        def pct(v):
            return "" if v is None else f"{100.0 * v:.2f}"
        row = {"model": self.label}
        for k in self.COLUMNS:
            row[f"AP3D_{k}"] = pct(self.ap_3d.get(k))
        for k in self.COLUMNS:
            row[f"APBEV_{k}"] = pct(self.ap_bev.get(k))
        row["AB_bytes"] = "" if self.average_byte is None else f"{self.average_byte:.2f}"
        return row

    def to_csv(self) -> str:
        return reports_to_csv([self])

    def to_table(self) -> str:
        return reports_to_table([self])


def reports_to_csv(reports: Iterable[EvalReport]) -> str:
    reports = list(reports)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(reports[0].row()))
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def reports_to_table(reports: Iterable[EvalReport]) -> str:
    """Plain-text table: AP_3D and AP_BEV per range (in %) followed by AB."""
    reports = list(reports)
    cols = EvalReport.COLUMNS
    head1 = f"{'Model':<16}|{'AP_3D (IoU=0.5)':^36}|{'AP_BEV (IoU=0.5)':^36}|{'AB (Byte)':>12}"
    head2 = f"{'':<16}|" + "".join(f"{c:>9}" for c in cols) + "|" + "".join(f"{c:>9}" for c in cols) + f"|{'':>12}"
    lines = [head1, head2, "-" * len(head1)]
    for r in reports:
        row = r.row()
        cells3 = "".join(f"{row[f'AP3D_{c}'] or '-':>9}" for c in cols)
        cellsb = "".join(f"{row[f'APBEV_{c}'] or '-':>9}" for c in cols)
        lines.append(f"{r.label:<16}|{cells3}|{cellsb}|{row['AB_bytes'] or '-':>12}")
    return "\n".join(lines)


def evaluate_frames(frames: Sequence[tuple[Sequence[Detection], Sequence[Box3D]]],
                    cube: Sequence[float] | None = None, thresh: float = 0.5,
                    n_points: int = 40, average_byte: float | None = None,
                    label: str = "") -> EvalReport:
    """Pool detections over frames and compute per-bucket AP_3D and AP_BEV."""
    report = EvalReport(average_byte=average_byte, label=label)
    for kind, iou_fn in IOU_FUNCTIONS.items():
        pooled = {k: ([], [], 0) for k in RANGE_BUCKETS}
        for dets, gts in frames:
            if cube is not None:
                gts = [g for g in gts if in_cube(g, cube)]
                dets = [d for d in dets if in_cube(d[0], cube)]
            for name, (bg, bd) in bucketize(gts, dets, iou_fn, thresh).items():
                s, tp, _ = match_detections(bd, bg, iou_fn, thresh)
                ps, ptp, n = pooled[name]
                pooled[name] = (ps + [s], ptp + [tp], n + len(bg))
        target = report.ap_3d if kind == "3d" else report.ap_bev
        for name, (ps, ptp, n) in pooled.items():
            scores = np.concatenate(ps) if ps else np.zeros(0)
            tps = np.concatenate(ptp) if ptp else np.zeros(0, dtype=bool)
            target[name] = ap_from_matches(scores, tps, n, n_points)
    return report
