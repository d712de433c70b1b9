"""End-to-end cooperative detector: model assembly, training and evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compression import FeatureCompressor, WirePacket, average_byte
from .config import RunConfig
from .detector import (AnchorHead, BevCollapse, Predictions, Pyramid, Targets, assign_targets,
                       detection_loss, make_anchors, postprocess)
from .fusion import ChannelMask, MultiScaleCrossAttention
from .geometry import Box3D, CameraRig, VoxelVolume, fuse_average, sample_voxels
from .metrics import EvalReport, evaluate_frames
from .ndtensor import AdamW, Module, Tensor, clip_grad_norm
from .scenario import NoiseSpec, Scene, apply_translation_noise, generate_scene

log = logging.getLogger(__name__)


@dataclass
class ForwardInfo:
    omega: np.ndarray | None = None
    packet: WirePacket | None = None
    volume: VoxelVolume | None = None


class CooperativeDetector(Module):
    """Two-view detector: per-side pyramids, link compression, scale attention,
    camera channel masks, voxel point-sampling and an anchor head on the fused BEV."""

    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c = cfg.channels
        self.veh_pyramid = Pyramid(rng, c)
        self.inf_pyramid = Pyramid(rng, c)
        self.compressor = FeatureCompressor(rng, c, cfg.compression) if cfg.use_fc else None
        self.mca = MultiScaleCrossAttention(rng, c) if cfg.use_mca else None
        if cfg.use_ccm:
            self.veh_mask = ChannelMask(rng, c, input_scale=cfg.ccm_input_scale)
            self.inf_mask = ChannelMask(rng, c, input_scale=cfg.ccm_input_scale)
        self.bev = BevCollapse(rng, cfg.grid.counts[2], c, cfg.bev_channels)
        self.head = AnchorHead(rng, cfg.bev_channels)
        self.anchors = make_anchors(cfg.grid, cfg.anchor_spec)

    def infra_features(self, image: Tensor) -> tuple[list[Tensor], WirePacket | None]:
        feats = self.inf_pyramid(image)
        if self.compressor is None:
            return feats, None
        pkt = self.compressor.compress(feats[0])
        return self.compressor.decompress(pkt), pkt

    def __call__(self, veh_img, inf_img, veh_rig: CameraRig, inf_rig: CameraRig,
                 mode: str | None = None) -> tuple[Predictions, ForwardInfo]:
        mode = mode or self.cfg.fusion_mode
        cfg = self.cfg
        info = ForwardInfo()
        f_veh = f_inf = None
        if mode in ("intermediate", "only-veh"):
            veh_ms = self.veh_pyramid(Tensor(veh_img))
        if mode in ("intermediate", "only-inf"):
            inf_ms, info.packet = self.infra_features(Tensor(inf_img))
        if mode == "intermediate" and self.mca is not None:
            f_veh, f_inf, omega = self.mca(veh_ms, inf_ms)
            info.omega = omega.data.copy()
        else:
            f_veh = veh_ms[0] if mode != "only-inf" else None
            f_inf = inf_ms[0] if mode != "only-veh" else None
        if cfg.use_ccm:
            f_veh = f_veh if f_veh is None else self.veh_mask(f_veh, veh_rig)
            f_inf = f_inf if f_inf is None else self.inf_mask(f_inf, inf_rig)
        grid = cfg.grid
        v_veh = None if f_veh is None else sample_voxels(veh_rig, f_veh, grid, cfg.sampling)
        v_inf = None if f_inf is None else sample_voxels(inf_rig, f_inf, grid, cfg.sampling)
        if v_veh is not None and v_inf is not None:
            vol = fuse_average(v_veh, v_inf, cfg.voxel_average)
        else:
            vol = v_veh if v_veh is not None else v_inf
        info.volume = vol
        return self.head(self.bev(vol)), info

    def detect(self, scene: Scene, inf_rig: CameraRig | None = None, mode: str | None = None):
        pred, info = self(scene.vehicle_image, scene.infrastructure_image, scene.vehicle_rig,
                          inf_rig or scene.infrastructure_rig, mode)
        dets = postprocess(pred, self.anchors, self.cfg.score_thresh, self.cfg.nms_iou)
        return dets, info


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [r["total"] for r in self.rows]

    def to_csv(self) -> str:
        keys = ["step", "scene", "total", "bbox", "cls", "dir", "n_pos"]
        lines = [",".join(keys)]
        for r in self.rows:
            lines.append(",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys))
        return "\n".join(lines) + "\n"


class NonFiniteLoss(RuntimeError):
    pass


def training_scenes(cfg: RunConfig) -> list[Scene]:
    spec = cfg.scenario()
    return [generate_scene(spec, cfg.seed * 1000 + i) for i in range(cfg.n_train_scenes)]


def evaluation_scenes(cfg: RunConfig) -> list[Scene]:
    spec = cfg.scenario()
    return [generate_scene(spec, cfg.eval_seed_offset + cfg.seed * 1000 + i)
            for i in range(cfg.n_eval_scenes)]


def train(model: CooperativeDetector, scenes: Sequence[Scene], steps: int | None = None,
          lr: float | None = None) -> TrainLog:
    """AdamW over ``steps`` single-scene steps, cycling through ``scenes`` in order."""
    cfg = model.cfg
    steps = cfg.train_steps if steps is None else steps
    opt = AdamW(model.parameters(), lr=cfg.lr if lr is None else lr, weight_decay=cfg.weight_decay)
    targets: list[Targets] = [assign_targets(model.anchors, s.objects) for s in scenes]
    out = TrainLog()
    for step in range(steps):
        k = step % len(scenes)
        s = scenes[k]
        opt.zero_grad()
        pred, _ = model(s.vehicle_image, s.infrastructure_image, s.vehicle_rig, s.infrastructure_rig)
        terms = detection_loss(pred, targets[k], cfg.loss_weights)
        value = terms.total.item()
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss became {value} at step {step} (scene {s.frame_id}); "
                                f"bbox={terms.bbox} cls={terms.cls} dir={terms.dir} n_pos={terms.n_pos}")
        terms.total.backward()
        if cfg.grad_clip:
            clip_grad_norm(opt.params, cfg.grad_clip)
        opt.step()
        out.rows.append({"step": step, "scene": s.frame_id, "total": value, "bbox": terms.bbox,
                         "cls": terms.cls, "dir": terms.dir, "n_pos": terms.n_pos})
        if step % 50 == 0:
            log.info("step %d loss %.4f", step, value)
    return out


@dataclass
class EvalResult:
    report: EvalReport
    detections: list[list[tuple[Box3D, float]]]
    omegas: list[np.ndarray | None]
    packets: list[WirePacket]


def evaluate(model: CooperativeDetector, scenes: Sequence[Scene], mode: str | None = None,
             noise_T: float = 0.0, noise_seed: int = 0, label: str = "") -> EvalResult:
    """Detect on every scene and score against its labels.

    With ``noise_T > 0`` each frame's infrastructure rig gets its own translation
    noise draw (seed ``noise_seed + frame index``) before inference.
    """
    if not scenes:
        raise ValueError("evaluation needs at least one scene")
    frames, dets_all, omegas, packets = [], [], [], []
    for i, s in enumerate(scenes):
        rig = apply_translation_noise(s.infrastructure_rig, NoiseSpec(noise_T, noise_seed + i))
        dets, info = model.detect(s, rig, mode)
        frames.append((dets, s.objects))
        dets_all.append(dets)
        omegas.append(info.omega)
        if info.packet is not None:
            packets.append(info.packet)
    ab = average_byte(packets) if packets else None
    report = evaluate_frames(frames, cube=model.cfg.grid_bounds, n_points=model.cfg.ap_points,
                             average_byte=ab, label=label or (mode or model.cfg.fusion_mode))
    return EvalResult(report, dets_all, omegas, packets)
