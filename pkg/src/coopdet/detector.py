"""Image pyramid, voxel-to-BEV collapse, anchor head, training loss and rotated NMS."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Box3D, VoxelGrid, VoxelVolume
from .layers import Conv2d
from .metrics import bev_iou
from .ndtensor import (Module, Tensor, log_sigmoid, log_softmax, mul, power, reshape, sigmoid, sin,
                       smooth_l1, take, transpose, tsum)

LOSS_WEIGHTS = {"bbox": 2.0, "cls": 1.0, "dir": 0.2}
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
POS_IOU = 0.6
NEG_IOU = 0.45
ANCHOR_YAWS = (0.0, math.pi / 2)
BOX_DIM = 7


class Pyramid(Module):
    """Four-scale conv pyramid at strides 4, 8, 16 and 32.

    A stride-2 stem is followed by four stride-2 stages, each emitting one scale.
    """

    def __init__(self, rng: np.random.Generator, channels: int, in_channels: int = 3):
        self.stem = Conv2d(rng, in_channels, channels, 3, stride=2, act=True)
        self.stages = [Conv2d(rng, channels, channels, 3, stride=2, act=True) for _ in range(4)]

    def __call__(self, image: Tensor) -> list[Tensor]:
        scale_extents(*image.shape[1:])
        x = self.stem(image)
        out = []
        for stage in self.stages:
            x = stage(x)
            out.append(x)
        return out


def scale_extents(h: int, w: int) -> list[tuple[int, int]]:
    """Spatial extents of the four pyramid scales for an ``h x w`` image."""
    if h % 32 or w % 32:
        raise ValueError(f"image {h}x{w} must have both sides divisible by 32")
    return [(h >> m, w >> m) for m in range(2, 6)]


def pad_to_multiple(image: np.ndarray, divisor: int = 32) -> np.ndarray:
    """Zero-pad ``[C, H, W]`` at the bottom and right so both sides divide ``divisor``."""
    _, h, w = image.shape
    return np.pad(image, ((0, 0), (0, -h % divisor), (0, -w % divisor)))


def stack_height(volume: VoxelVolume) -> Tensor:
    """``[Nx, Ny, Nz, C]`` voxels to a ``[Nz*C, Nx, Ny]`` map (z-major channel order)."""
    nx, ny, nz, c = volume.features.shape
    return reshape(transpose(volume.features, (2, 3, 0, 1)), (nz * c, nx, ny))


class BevCollapse(Module):
    """Stack height into channels, then two 3x3 convs down to the BEV width."""

    def __init__(self, rng: np.random.Generator, nz: int, c_voxel: int, c_bev: int):
        self.conv1 = Conv2d(rng, nz * c_voxel, c_bev, 3, act=True)
        self.conv2 = Conv2d(rng, c_bev, c_bev, 3, act=True)

    def __call__(self, volume: VoxelVolume) -> Tensor:
        """Returns the BEV feature as ``[Nx, Ny, C_bev]``."""
        x = self.conv2(self.conv1(stack_height(volume)))
        return transpose(x, (1, 2, 0))


# anchors and box coding -------------------------------------------------------

@dataclass(frozen=True)
class AnchorSpec:
    w: float = 1.9
    h: float = 1.7
    l: float = 4.6
    z: float = 0.85


def make_anchors(grid: VoxelGrid, spec: AnchorSpec = AnchorSpec()) -> np.ndarray:
    """One anchor per BEV cell center and yaw bin, ``[Nx*Ny*2, 7]`` in (i, j, yaw) order."""
    nx, ny, _ = grid.counts
    xs = grid.bounds[0] + (np.arange(nx) + 0.5) * grid.delta[0]
    ys = grid.bounds[1] + (np.arange(ny) + 0.5) * grid.delta[1]
    X, Y, R = np.meshgrid(xs, ys, np.array(ANCHOR_YAWS), indexing="ij")
    n = X.size
    return np.column_stack([X.reshape(-1), Y.reshape(-1), np.full(n, spec.z), np.full(n, spec.w),
                            np.full(n, spec.h), np.full(n, spec.l), R.reshape(-1)])


def direction_bin(theta) -> np.ndarray:
    """0 when the heading lies in [0, pi) mod 2pi, else 1."""
    return np.floor(np.mod(theta, 2 * np.pi) / np.pi).astype(np.int64) % 2


def encode(boxes: np.ndarray, anchors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Residuals ``[N, 7]`` and direction bins ``[N]`` of boxes relative to anchors."""
    xa, ya, za, wa, ha, la, ta = anchors.T
    xg, yg, zg, wg, hg, lg, tg = boxes.T
    diag = np.sqrt(la ** 2 + wa ** 2)
    res = np.column_stack([(xg - xa) / diag, (yg - ya) / diag, (zg - za) / ha,
                           np.log(wg / wa), np.log(hg / ha), np.log(lg / la), tg - ta])
    return res, direction_bin(tg)


def decode(res: np.ndarray, anchors: np.ndarray, dir_bins: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`encode`; the direction bin picks which half-turn the yaw sits in."""
    xa, ya, za, wa, ha, la, ta = anchors.T
    diag = np.sqrt(la ** 2 + wa ** 2)
    theta = ta + res[:, 6]
    if dir_bins is not None:
        theta = np.mod(theta, np.pi) + np.pi * dir_bins
    theta = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    return np.column_stack([res[:, 0] * diag + xa, res[:, 1] * diag + ya, res[:, 2] * ha + za,
                            wa * np.exp(res[:, 3]), ha * np.exp(res[:, 4]), la * np.exp(res[:, 5]),
                            theta])


@dataclass
class Targets:
    labels: np.ndarray  # [A] 1 positive, 0 negative, -1 ignored
    boxes: np.ndarray  # [A, 7] residual targets, valid where labels == 1
    dirs: np.ndarray  # [A]

    @property
    def n_pos(self) -> int:
        return int((self.labels == 1).sum())


def anchor_iou(anchors: np.ndarray, gts: Sequence[Box3D]) -> np.ndarray:
    """BEV IoU ``[A, G]``, evaluating polygons only for anchors near each box."""
    out = np.zeros((len(anchors), len(gts)))
    ra = 0.5 * np.hypot(anchors[:, 3], anchors[:, 5])
    for j, g in enumerate(gts):
        rg = 0.5 * math.hypot(g.l, g.w)
        near = np.nonzero(np.hypot(anchors[:, 0] - g.x, anchors[:, 1] - g.y) < ra + rg)[0]
        for i in near:
            out[i, j] = bev_iou(Box3D.from_array(anchors[i]), g)
    return out


def assign_targets(anchors: np.ndarray, gts: Sequence[Box3D], pos_iou: float = POS_IOU,
                   neg_iou: float = NEG_IOU) -> Targets:
    """IoU matcher: >= pos_iou positive, <= neg_iou negative, and each box's best anchor positive."""
    a = len(anchors)
    labels = np.zeros(a, dtype=np.int64)
    boxes = np.zeros((a, BOX_DIM))
    dirs = np.zeros(a, dtype=np.int64)
    if not gts:
        return Targets(labels, boxes, dirs)
    iou = anchor_iou(anchors, gts)
    best_gt = iou.argmax(axis=1)
    best = iou.max(axis=1)
    labels[(best > neg_iou) & (best < pos_iou)] = -1
    labels[best >= pos_iou] = 1
    for j in range(len(gts)):
        if iou[:, j].max() > 0:
            i = int(iou[:, j].argmax())
            labels[i] = 1
            best_gt[i] = j
    pos = labels == 1
    gt_arr = np.array([g.as_array() for g in gts])
    res, d = encode(gt_arr[best_gt[pos]], anchors[pos])
    boxes[pos] = res
    dirs[pos] = d
    return Targets(labels, boxes, dirs)


# head and loss ----------------------------------------------------------------

@dataclass
class Predictions:
    boxes: Tensor  # [A, 7] residuals
    scores: Tensor  # [A] class logits
    dirs: Tensor  # [A, 2] direction logits


class AnchorHead(Module):
    def __init__(self, rng: np.random.Generator, c_bev: int, n_yaw: int = len(ANCHOR_YAWS),
                 prior: float = 0.01):
        self.n_yaw = n_yaw
        self.box = Conv2d(rng, c_bev, n_yaw * BOX_DIM, 1)
        self.cls = Conv2d(rng, c_bev, n_yaw, 1)
        self.dir = Conv2d(rng, c_bev, n_yaw * 2, 1)
        self.box.weight.data *= 0.1
        self.box.bias.data[...] = 0.0
        self.cls.bias.data[...] = -math.log((1 - prior) / prior)

    def __call__(self, bev: Tensor) -> Predictions:
        """``bev`` is ``[Nx, Ny, C]``; anchors are ordered (i, j, yaw)."""
        x = transpose(bev, (2, 0, 1))
        nx, ny = x.shape[1:]
        r = self.n_yaw

        def per_anchor(t: Tensor, k: int) -> Tensor:
            t = transpose(reshape(t, (r, k, nx, ny)), (2, 3, 0, 1))
            return reshape(t, (nx * ny * r, k))

        scores = reshape(transpose(self.cls(x), (1, 2, 0)), (nx * ny * r,))
        return Predictions(per_anchor(self.box(x), BOX_DIM), scores, per_anchor(self.dir(x), 2))


def focal_loss(logits: Tensor, targets: np.ndarray, gamma: float = FOCAL_GAMMA,
               alpha: float = FOCAL_ALPHA) -> Tensor:
    """Summed sigmoid focal loss for binary ``targets`` in {0, 1}."""
    y = np.asarray(targets, dtype=np.float64)
    p = sigmoid(logits)
    pos_term = mul(power(1.0 - p, gamma), log_sigmoid(logits))
    neg_term = mul(power(p, gamma), log_sigmoid(-logits))
    loss = -(mul(pos_term, alpha * y) + mul(neg_term, (1.0 - alpha) * (1.0 - y)))
    return tsum(loss)


@dataclass
class LossTerms:
    total: Tensor
    bbox: float
    cls: float
    dir: float
    n_pos: int


def detection_loss(pred: Predictions, tgt: Targets, weights: dict[str, float] = LOSS_WEIGHTS,
                   smooth_beta: float = 1.0 / 9.0) -> LossTerms:
    """Weighted sum of box, classification and direction losses over the positive count.

    The yaw residual enters the box loss as ``sin(pred - target)`` so a half-turn
    error costs nothing there; the direction classifier resolves it.
    """
    valid = np.nonzero(tgt.labels >= 0)[0]
    pos = np.nonzero(tgt.labels == 1)[0]
    n = len(pos)
    l_cls = focal_loss(take(pred.scores, valid), tgt.labels[valid] == 1)
    total = l_cls * weights["cls"]
    l_box_v = l_dir_v = 0.0
    if n:
        pb = take(pred.boxes, pos)  # [n, 7]
        tb = tgt.boxes[pos]
        lin = take(pb, (slice(None), slice(0, 6))) - tb[:, :6]
        ang = sin(take(pb, (slice(None), 6)) - tb[:, 6])
        l_box = tsum(smooth_l1(lin, smooth_beta)) + tsum(smooth_l1(ang, smooth_beta))
        logp = log_softmax(take(pred.dirs, pos), axis=1)
        l_dir = -tsum(take(logp, (np.arange(n), tgt.dirs[pos])))
        total = total + l_box * weights["bbox"] + l_dir * weights["dir"]
        l_box_v, l_dir_v = l_box.item(), l_dir.item()
    total = total * (1.0 / max(n, 1))
    return LossTerms(total, l_box_v, l_cls.item(), l_dir_v, n)


def postprocess(pred: Predictions, anchors: np.ndarray, score_thresh: float = 0.1,
                nms_iou: float = 0.1, pre_nms: int = 100, max_dets: int = 50
                ) -> list[tuple[Box3D, float]]:
    scores = 1.0 / (1.0 + np.exp(-pred.scores.data))
    keep = np.nonzero(scores >= score_thresh)[0]
    keep = keep[np.argsort(-scores[keep], kind="stable")][:pre_nms]
    if keep.size == 0:
        return []
    dirs = pred.dirs.data[keep].argmax(axis=1)
    boxes = decode(pred.boxes.data[keep], anchors[keep], dirs)
    dets = []
    for b, s in zip(boxes, scores[keep]):
        if b[3] > 0 and b[4] > 0 and b[5] > 0 and np.all(np.isfinite(b)):
            dets.append((Box3D.from_array(b), float(s)))
    return rotated_nms(dets, nms_iou)[:max_dets]


def rotated_nms(dets: Sequence[tuple[Box3D, float]], iou_thresh: float) -> list[tuple[Box3D, float]]:
    """Greedy suppression by BEV IoU; equal scores are ranked by input position."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    kept: list[int] = []
    for i in order:
        if all(bev_iou(dets[i][0], dets[k][0]) <= iou_thresh for k in kept):
            kept.append(i)
    return [dets[i] for i in kept]
