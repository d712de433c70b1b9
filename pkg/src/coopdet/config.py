"""Run configuration, stored as YAML.

Every key is optional; missing keys take the desk-scale defaults below.
``preset: full`` switches the defaults to the full-size voxel grid, channel
widths and optimiser settings of the original detector.  Example::

    preset: desk
    grid_bounds: [0, -16, 0, 32, 16, 2]
    voxel_size: [1, 1, 1]
    image_hw: [64, 64]
    channels: 8          # image feature width C (also the voxel width C1)
    bev_channels: 16     # C2
    ccr: 2
    scr: 1
    wire_dtype_bytes: 4
    fusion_mode: intermediate   # or only-veh / only-inf
    train_steps: 1500
    lr: 0.003
    seed: 0
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .compression import CompressionConfig
from .detector import AnchorSpec, LOSS_WEIGHTS
from .geometry import FEATURE_STRIDE, VoxelGrid
from .scenario import ScenarioSpec

FUSION_MODES = ("intermediate", "only-veh", "only-inf")
DEFAULT_NOISE_LEVELS = (0.0, 0.1, 0.2, 0.5, 1.0)
# channel compression first, then spatial compression at the largest CCR
FULL_COMPRESSION_SWEEP = ((1, 1), (4, 1), (16, 1), (64, 1), (64, 4), (64, 16), (64, 64), (64, 256))
# same ordering, scaled to 8 channels on a 16x16 map
DESK_COMPRESSION_SWEEP = ((1, 1), (2, 1), (4, 1), (8, 1), (8, 4), (8, 16))


@dataclass
class RunConfig:
    grid_bounds: tuple = (0.0, -16.0, 0.0, 32.0, 16.0, 2.0)
    voxel_size: tuple = (1.0, 1.0, 1.0)
    image_hw: tuple = (64, 64)
    channels: int = 8
    bev_channels: int = 16
    ccr: int = 2
    scr: int = 1
    wire_dtype_bytes: int = 4
    use_fc: bool = True
    use_mca: bool = True
    use_ccm: bool = True
    fusion_mode: str = "intermediate"
    voxel_average: str = "mean"
    sampling: str = "bilinear"
    ccm_input_scale: float = 0.05
    loss_weights: dict = field(default_factory=lambda: dict(LOSS_WEIGHTS))
    anchor: dict = field(default_factory=lambda: asdict(AnchorSpec()))
    lr: float = 3e-3
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    train_steps: int = 1500
    seed: int = 0
    noise_seed: int = 0
    n_train_scenes: int = 128
    n_eval_scenes: int = 32
    eval_seed_offset: int = 10_000
    n_objects: tuple = (2, 4)
    blind_spot: int = 1
    score_thresh: float = 0.1
    nms_iou: float = 0.1
    ap_points: int = 40
    noise_levels: tuple = DEFAULT_NOISE_LEVELS
    compression_sweep: tuple = DESK_COMPRESSION_SWEEP
    workers: int = 1
    output_dir: str = "runs/default"

    @classmethod
    def full(cls, **overrides) -> "RunConfig":
        """Full-size settings: 288x248x12 grid, C=C1=64, C2=256, AdamW lr 1e-4."""
        base = dict(grid_bounds=(0.0, -39.68, -3.0, 92.16, 39.68, 1.0), voxel_size=(0.32, 0.32, 0.33),
                    image_hw=(1088, 1920), channels=64, bev_channels=256, ccr=1, scr=1, lr=1e-4,
                    weight_decay=1e-4, anchor=asdict(AnchorSpec(z=-1.0)),
                    compression_sweep=FULL_COMPRESSION_SWEEP)
        base.update(overrides)
        return cls(**base)

    @property
    def grid(self) -> VoxelGrid:
        return VoxelGrid(tuple(self.grid_bounds), tuple(self.voxel_size))

    @property
    def compression(self) -> CompressionConfig:
        return CompressionConfig(self.ccr, self.scr, self.wire_dtype_bytes)

    @property
    def anchor_spec(self) -> AnchorSpec:
        return AnchorSpec(**self.anchor)

    def scenario(self) -> ScenarioSpec:
        return ScenarioSpec(grid=self.grid, image_hw=tuple(self.image_hw),
                            n_objects=tuple(self.n_objects), blind_spot=self.blind_spot)

    def validate(self) -> "RunConfig":
        h, w = self.image_hw
        if h % 32 or w % 32:
            raise ValueError(f"image_hw {self.image_hw} must be divisible by 32")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.voxel_average not in ("mean", "count"):
            raise ValueError(f"voxel_average must be 'mean' or 'count', got {self.voxel_average!r}")
        if self.sampling not in ("bilinear", "nearest"):
            raise ValueError(f"sampling must be 'bilinear' or 'nearest', got {self.sampling!r}")
        if self.ap_points not in (11, 40):
            raise ValueError("ap_points must be 11 or 40")
        self.grid  # raises on an empty grid
        if self.use_fc:
            self.compression.check(self.channels, h // FEATURE_STRIDE, w // FEATURE_STRIDE)
        if self.train_steps < 0 or self.n_eval_scenes < 0 or self.n_train_scenes < 0:
            raise ValueError("step and scene counts must be non-negative")
        if any(t < 0 for t in self.noise_levels):
            raise ValueError("noise levels must be non-negative")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data or {})
        preset = data.pop("preset", "desk")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for k in ("grid_bounds", "voxel_size", "image_hw", "n_objects", "noise_levels"):
            if k in data:
                data[k] = tuple(data[k])
        if "compression_sweep" in data:
            data["compression_sweep"] = tuple(tuple(p) for p in data["compression_sweep"])
        if preset == "full":
            return cls.full(**data).validate()
        if preset != "desk":
            raise ValueError(f"unknown preset {preset!r}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
