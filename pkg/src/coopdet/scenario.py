"""Synthetic two-camera scenes, label frame conversion, and calibration noise.

The vehicle camera sits near the ground looking down the +x axis with a
modest field of view; the infrastructure camera is mounted high beside the
road and pitched down, so it also sees lateral areas the vehicle cannot.
Objects are cuboids rendered with flat-shaded faces.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from skimage.draw import polygon as fill_polygon

from .geometry import Box3D, CameraRig, VoxelGrid, intrinsics, normalize_angle, project_points

# faces of Box3D.corners(): bottom ring 0-3, top ring 4-7
_FACES = ((4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7), (0, 3, 2, 1))
_FACE_SHADE = (1.0, 0.8, 0.65, 0.8, 0.65, 0.5)
NEAR = 0.1


@dataclass(frozen=True)
class ScenarioSpec:
    grid: VoxelGrid = VoxelGrid((0.0, -16.0, 0.0, 32.0, 16.0, 2.0), (1.0, 1.0, 1.0))
    image_hw: tuple[int, int] = (64, 64)
    n_objects: tuple[int, int] = (2, 5)
    blind_spot: int = 0  # objects forced outside the vehicle view
    vehicle_height: float = 1.6
    vehicle_hfov_deg: float = 50.0
    infra_eye: tuple[float, float, float] = (16.0, 22.0, 9.0)
    infra_target: tuple[float, float, float] = (16.0, -2.0, 0.0)
    infra_hfov_deg: float = 90.0
    pose_jitter: float = 0.0  # meters, uniform on the infrastructure mount position
    yaw_jitter: float = 0.15  # radians around the four axis-aligned headings
    margin: float = 3.0  # keep objects this far inside the grid's BEV bounds

    def __post_init__(self):
        b = self.grid.bounds
        if min(b[3] - b[0], b[4] - b[1], b[5] - b[2]) <= 0:
            raise ValueError("scene grid has zero volume")
        if b[3] - b[0] <= 2 * self.margin or b[4] - b[1] <= 2 * self.margin:
            raise ValueError("margin leaves no room to place objects")
        if self.n_objects[0] < 0 or self.n_objects[1] < self.n_objects[0]:
            raise ValueError(f"bad object count range {self.n_objects}")
        if self.blind_spot > self.n_objects[1]:
            raise ValueError("more blind-spot objects requested than objects allowed")


@dataclass
class Scene:
    vehicle_rig: CameraRig
    infrastructure_rig: CameraRig
    objects: list[Box3D]
    vehicle_image: np.ndarray  # [3, H, W] in [0, 1]
    infrastructure_image: np.ndarray
    frame_id: str = "0"

    def save(self, directory: str | Path) -> None:
        """Write two PNGs, two calibration JSONs and a labels JSON."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        _save_png(self.vehicle_image, d / "vehicle.png")
        _save_png(self.infrastructure_image, d / "infrastructure.png")
        self.vehicle_rig.save(d / "vehicle_calib.json")
        self.infrastructure_rig.save(d / "infrastructure_calib.json")
        labels = [dict(b.to_json(), type="Car") for b in self.objects]
        (d / "labels.json").write_text(json.dumps({"frame_id": self.frame_id, "labels": labels}, indent=1))

    @classmethod
    def load(cls, directory: str | Path) -> "Scene":
        d = Path(directory)
        meta = json.loads((d / "labels.json").read_text())
        objs = [Box3D(o["x"], o["y"], o["z"], o["w"], o["h"], o["l"], o["theta"]) for o in meta["labels"]]
        return cls(CameraRig.load(d / "vehicle_calib.json"), CameraRig.load(d / "infrastructure_calib.json"),
                   objs, _load_png(d / "vehicle.png"), _load_png(d / "infrastructure.png"),
                   str(meta.get("frame_id", d.name)))


def _save_png(img: np.ndarray, path: Path) -> None:
    arr = np.clip(np.rint(img.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def _load_png(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()


def vehicle_rig(spec: ScenarioSpec) -> CameraRig:
    h, w = spec.image_hw
    f = (w / 2) / math.tan(math.radians(spec.vehicle_hfov_deg) / 2)
    eye = (0.0, 0.0, spec.vehicle_height)
    return CameraRig.look_at(intrinsics(f, w, h), eye, (10.0, 0.0, spec.vehicle_height))


def infrastructure_rig(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> CameraRig:
    h, w = spec.image_hw
    f = (w / 2) / math.tan(math.radians(spec.infra_hfov_deg) / 2)
    eye = np.array(spec.infra_eye, dtype=np.float64)
    if rng is not None and spec.pose_jitter > 0:
        eye = eye + rng.uniform(-spec.pose_jitter, spec.pose_jitter, size=3)
    return CameraRig.look_at(intrinsics(f, w, h), eye, spec.infra_target)


def visible_fraction(rig: CameraRig, box: Box3D, image_hw: tuple[int, int]) -> float:
    """Share of the box corners that land in front of the camera and inside the image."""
    uvd = project_points(rig, box.corners())
    h, w = image_hw
    ok = (uvd[:, 2] > NEAR) & (uvd[:, 0] >= 0) & (uvd[:, 0] < w) & (uvd[:, 1] >= 0) & (uvd[:, 1] < h)
    return float(ok.mean())


def render(rig: CameraRig, boxes: Sequence[Box3D], colors: Sequence[np.ndarray],
           image_hw: tuple[int, int]) -> np.ndarray:
    """Painter's-algorithm render of flat-shaded cuboids onto a black ``[3, H, W]`` image.

    Pixel values are multiples of 1/255 so a PNG round trip is lossless.
    """
    h, w = image_hw
    img = np.zeros((3, h, w))
    depth = [float(project_points(rig, b.center[None])[0, 2]) for b in boxes]
    cam_center = rig.center
    for idx in sorted(range(len(boxes)), key=lambda i: -depth[i]):
        box = boxes[idx]
        corners = box.corners()
        uvd = project_points(rig, corners)
        if np.any(uvd[:, 2] <= NEAR):
            continue
        for face, shade in zip(_FACES, _FACE_SHADE):
            pts = corners[list(face)]
            normal = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            if np.dot(normal, cam_center - pts[0]) <= 0:
                continue
            rr, cc = fill_polygon(uvd[list(face), 1], uvd[list(face), 0], shape=(h, w))
            img[:, rr, cc] = (np.rint(colors[idx] * shade * 255.0) / 255.0)[:, None]
    return img


def _place_objects(spec: ScenarioSpec, rng: np.random.Generator, veh: CameraRig,
                   inf: CameraRig, n: int, n_blind: int) -> list[Box3D]:
    b = spec.grid.bounds
    objs: list[Box3D] = []
    tries = 0
    while len(objs) < n:
        tries += 1
        if tries > 2000:
            raise RuntimeError(f"could not place {n} objects in the scene area")
        l, w, hgt = rng.uniform(3.8, 5.0), rng.uniform(1.7, 2.1), rng.uniform(1.4, 1.9)
        yaw = rng.integers(4) * (math.pi / 2) + rng.uniform(-spec.yaw_jitter, spec.yaw_jitter)
        x = rng.uniform(b[0] + spec.margin, b[3] - spec.margin)
        y = rng.uniform(b[1] + spec.margin, b[4] - spec.margin)
        box = Box3D(x, y, b[2] + hgt / 2, w, hgt, l, yaw)
        if any(math.hypot(o.x - x, o.y - y) < 0.5 * (math.hypot(o.l, o.w) + math.hypot(l, w)) + 0.5
               for o in objs):
            continue
        if visible_fraction(inf, box, spec.image_hw) < 1.0:
            continue
        in_veh = visible_fraction(veh, box, spec.image_hw)
        if len(objs) < n_blind:
            if in_veh > 0:
                continue
        elif in_veh < 1.0 and rng.uniform() < 0.5:
            # mostly keep ordinary objects in the shared view
            continue
        objs.append(box)
    return objs


def generate_scene(spec: ScenarioSpec, seed: int) -> Scene:
    """Deterministic scene for ``seed``; the first ``spec.blind_spot`` objects are hidden from the vehicle."""
    rng = np.random.default_rng(seed)
    veh = vehicle_rig(spec)
    inf = infrastructure_rig(spec, rng)
    n = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))
    n = max(n, spec.blind_spot)
    objs = _place_objects(spec, rng, veh, inf, n, spec.blind_spot)
    colors = [_object_color(rng) for _ in objs]
    return Scene(veh, inf, objs, render(veh, objs, colors, spec.image_hw),
                 render(inf, objs, colors, spec.image_hw), frame_id=str(seed))


def _object_color(rng: np.random.Generator) -> np.ndarray:
    # saturated, bright colours keep objects well separated from the black background
    base = rng.uniform(0.35, 1.0, size=3)
    base[rng.integers(3)] = 1.0
    return np.rint(base * 255.0) / 255.0


# label frames -------------------------------------------------------------

def _yaw_of(R: np.ndarray) -> float:
    return math.atan2(R[1, 0], R[0, 0])


def world_to_vehicle(labels: Sequence[Box3D], ego_pose: tuple[np.ndarray, np.ndarray]) -> list[Box3D]:
    """Re-express world-frame boxes in the vehicle frame.

    ``ego_pose = (R, t)`` maps vehicle coordinates to world: ``p_w = R p_v + t``.
    """
    R = np.asarray(ego_pose[0], dtype=np.float64)
    t = np.asarray(ego_pose[1], dtype=np.float64)
    yaw = _yaw_of(R)
    out = []
    for b in labels:
        c = R.T @ (b.center - t)
        out.append(Box3D(c[0], c[1], c[2], b.w, b.h, b.l, normalize_angle(b.theta - yaw)))
    return out


def vehicle_to_world(labels: Sequence[Box3D], ego_pose: tuple[np.ndarray, np.ndarray]) -> list[Box3D]:
    R = np.asarray(ego_pose[0], dtype=np.float64)
    t = np.asarray(ego_pose[1], dtype=np.float64)
    yaw = _yaw_of(R)
    out = []
    for b in labels:
        c = R @ b.center + t
        out.append(Box3D(c[0], c[1], c[2], b.w, b.h, b.l, normalize_angle(b.theta + yaw)))
    return out


def yaw_pose(yaw: float, t) -> tuple[np.ndarray, np.ndarray]:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.asarray(t, dtype=np.float64)


# calibration noise --------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Translation noise of amplitude ``T`` meters, read as a 3-sigma bound."""

    T: float
    seed: int = 0

    def __post_init__(self):
        if self.T < 0:
            raise ValueError(f"noise amplitude must be >= 0, got {self.T}")

    @property
    def sigma(self) -> float:
        return self.T / 3.0


def draw_translation_noise(T: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """I.i.d. N(0, (T/3)^2) offsets for (t_x, t_y); shape ``[2]`` or ``[size, 2]``."""
    shape = (2,) if size is None else (size, 2)
    return rng.normal(0.0, T / 3.0, size=shape)


def apply_translation_noise(rig: CameraRig, spec: NoiseSpec) -> CameraRig:
    """Perturb the x and y components of the rig's translation; z and rotation stay put."""
    if spec.T == 0:
        return rig
    delta = draw_translation_noise(spec.T, np.random.default_rng(spec.seed))
    t = rig.t.copy()
    t[:2] += delta
    return rig.with_translation(t)
