"""Pinhole cameras, vehicle-frame voxel grids, and point-sampling of image features."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ndtensor import Tensor, bilinear_sample, mul, reshape, take, transpose

FEATURE_STRIDE = 4


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [-pi, pi); in-range values pass through untouched."""
    if -math.pi <= theta < math.pi:
        return theta
    out = (theta + math.pi) % (2 * math.pi) - math.pi
    return -math.pi if out >= math.pi else out


@dataclass(frozen=True)
class CameraRig:
    """Intrinsics ``K`` plus the vehicle-to-camera rigid transform ``(R, t)``."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if abs(K[2, 2] - 1.0) > 1e-12 or np.any(np.abs(K[[1, 2, 2], [0, 0, 1]]) > 1e-12):
            raise ValueError("K must be upper-triangular with K[2,2] == 1")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("R must be a proper rotation (orthonormal, det +1)")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def center(self) -> np.ndarray:
        """Camera position in the vehicle frame."""
        return -self.R.T @ self.t

    def with_translation(self, t) -> "CameraRig":
        return CameraRig(self.K, self.R, np.asarray(t, dtype=np.float64))

    def flat_params(self) -> np.ndarray:
        """``R``, ``t`` and ``K`` flattened row-major and concatenated (21 values)."""
        return np.concatenate([self.R.reshape(-1), self.t, self.K.reshape(-1)])

    def to_json(self) -> dict:
        return {"K": self.K.reshape(-1).tolist(), "R": self.R.reshape(-1).tolist(),
                "t": self.t.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "CameraRig":
        for key, n in (("K", 9), ("R", 9), ("t", 3)):
            if len(obj.get(key, ())) != n:
                raise ValueError(f"calibration field {key!r} must hold {n} floats")
        return cls(np.array(obj["K"]).reshape(3, 3), np.array(obj["R"]).reshape(3, 3),
                   np.array(obj["t"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "CameraRig":
        return cls.from_json(json.loads(Path(path).read_text()))

    @classmethod
    def look_at(cls, K, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraRig":
        """Camera at ``eye`` looking at ``target``; camera axes are x right, y down, z forward."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        if np.linalg.norm(fwd) == 0:
            raise ValueError("eye and target coincide")
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("view direction is parallel to the up vector")
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(K, R, -R @ eye)


def intrinsics(f: float, width: int, height: int) -> np.ndarray:
    return np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])


def project(rig: CameraRig, p) -> tuple[float, float, float]:
    """Return ``(u, v, d)`` with ``d [u, v, 1]^T = K [R | t] [p, 1]^T``.

    Points behind the camera come back with ``d <= 0``; filtering is the caller's job.
    """
    uvd = project_points(rig, np.asarray(p, dtype=np.float64)[None])[0]
    return float(uvd[0]), float(uvd[1]), float(uvd[2])


def project_points(rig: CameraRig, pts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`project` over ``pts[N, 3]``; returns ``[N, 3]`` of (u, v, d)."""
    cam = pts @ rig.R.T + rig.t
    hom = cam @ rig.K.T
    d = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = hom[:, 0] / d
        v = hom[:, 1] / d
    return np.stack([u, v, d], axis=1)


def unproject(rig: CameraRig, u: float, v: float, d: float) -> np.ndarray:
    """Vehicle-frame point that projects to pixel (u, v) at depth d."""
    cam = np.linalg.solve(rig.K, d * np.array([u, v, 1.0]))
    return rig.R.T @ (cam - rig.t)


def _axis_count(lo: float, hi: float, step: float) -> int:
    r = (hi - lo) / step
    n = round(r)
    return int(n) if abs(r - n) < 1e-9 else int(math.floor(r))


@dataclass(frozen=True)
class VoxelGrid:
    bounds: tuple[float, float, float, float, float, float]
    delta: tuple[float, float, float]
    counts: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        b = tuple(float(x) for x in self.bounds)
        d = tuple(float(x) for x in self.delta)
        if len(b) != 6 or len(d) != 3:
            raise ValueError("bounds needs 6 values and delta 3")
        if any(s <= 0 for s in d):
            raise ValueError(f"voxel size must be positive, got {d}")
        n = tuple(_axis_count(b[i], b[i + 3], d[i]) for i in range(3))
        if any(c < 1 for c in n):
            raise ValueError(f"grid {b} with voxel size {d} has an empty axis")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "counts", n)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.bounds[:3])

    def centers(self) -> np.ndarray:
        """Voxel centers as ``[Nx, Ny, Nz, 3]``."""
        axes = [self.bounds[i] + (np.arange(self.counts[i]) + 0.5) * self.delta[i] for i in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, xyz) -> bool:
        x = np.asarray(xyz)
        b = self.bounds
        return bool(np.all(x >= b[:3]) and np.all(x <= b[3:]))


def voxel_centers(grid: VoxelGrid) -> np.ndarray:
    """Flat ``[Nx*Ny*Nz, 3]`` list of voxel centers in (i, j, k) row-major order."""
    return grid.centers().reshape(-1, 3)


@dataclass
class VoxelVolume:
    features: Tensor  # [Nx, Ny, Nz, C]
    mask: np.ndarray  # bool [Nx, Ny, Nz]

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.mask.shape

    def coverage(self) -> int:
        return int(self.mask.sum())


def sample_mask(rig: CameraRig, grid: VoxelGrid, feat_hw: tuple[int, int],
                stride: int = FEATURE_STRIDE) -> tuple[np.ndarray, np.ndarray]:
    """Feature-map coordinates ``[N, 2]`` of each voxel center and the visibility mask ``[N]``."""
    uvd = project_points(rig, voxel_centers(grid))
    h0, w0 = feat_hw
    d = uvd[:, 2]
    with np.errstate(invalid="ignore"):
        uv = uvd[:, :2] / stride
        mask = (d > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < w0) & (uv[:, 1] >= 0) & (uv[:, 1] < h0)
    uv = np.where(mask[:, None], uv, -1.0)
    return uv, mask


def sample_voxels(rig: CameraRig, feat: Tensor, grid: VoxelGrid, mode: str = "bilinear",
                  stride: int = FEATURE_STRIDE) -> VoxelVolume:
    """Fill every voxel with the feature found where its center projects.

    ``feat`` is the finest ``[C, h0, w0]`` map; image pixels are divided by
    ``stride`` to land in its coordinates.  Voxels behind the camera or outside
    the map stay zero and are flagged off in the mask.
    """
    c, h0, w0 = feat.shape
    uv, mask = sample_mask(rig, grid, (h0, w0), stride)
    if mode == "nearest":
        uv = np.where(mask[:, None], np.floor(uv), -1.0)
    elif mode != "bilinear":
        raise ValueError(f"unknown sampling mode {mode!r}")
    sampled = bilinear_sample(feat, Tensor(uv))  # [C, N]
    sampled = mul(sampled, mask[None, :].astype(np.float64))
    nx, ny, nz = grid.counts
    vol = reshape(transpose(sampled, (1, 0)), (nx, ny, nz, c))
    return VoxelVolume(vol, mask.reshape(nx, ny, nz))


def fuse_average(v_veh: VoxelVolume, v_inf: VoxelVolume, mode: str = "mean") -> VoxelVolume:
    """Average two voxel volumes.

    ``mode="mean"`` divides by two everywhere; ``mode="count"`` divides by the
    number of views that actually see each voxel.
    """
    if v_veh.features.shape != v_inf.features.shape:
        raise ValueError(f"volume shapes differ: {v_veh.features.shape} vs {v_inf.features.shape}")
    mask = v_veh.mask | v_inf.mask
    total = v_veh.features + v_inf.features
    if mode == "mean":
        feats = total * 0.5
    elif mode == "count":
        n = v_veh.mask.astype(np.float64) + v_inf.mask.astype(np.float64)
        feats = total * (1.0 / np.maximum(n, 1.0))[..., None]
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    return VoxelVolume(feats, mask)


@dataclass
class Box3D:
    """Oriented box in the vehicle frame; ``l`` runs along the heading, ``w`` across it."""

    x: float
    y: float
    z: float
    w: float
    h: float
    l: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0 and self.l > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w} h={self.h} l={self.l}")
        self.theta = normalize_angle(float(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w, self.h, self.l, self.theta])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Box3D":
        return cls(*(float(v) for v in a[:7]))

    def footprint(self) -> np.ndarray:
        """BEV corners ``[4, 2]`` counter-clockwise."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        hl, hw = self.l / 2, self.w / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    def corners(self) -> np.ndarray:
        """3D corners ``[8, 3]``: bottom ring then top ring."""
        fp = self.footprint()
        lo = np.column_stack([fp, np.full(4, self.z - self.h / 2)])
        hi = np.column_stack([fp, np.full(4, self.z + self.h / 2)])
        return np.vstack([lo, hi])

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z, "w": self.w, "h": self.h,
                "l": self.l, "theta": self.theta}
