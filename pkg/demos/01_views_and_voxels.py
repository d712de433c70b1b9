"""Two cameras, one voxel grid.

Generates a scene with one object hidden from the vehicle, shows which voxels
each camera can fill, and how much the roadside view adds.

    python3 demos/01_views_and_voxels.py
"""
import numpy as np

from coopdet.config import RunConfig
from coopdet.geometry import FEATURE_STRIDE, project_points, sample_mask
from coopdet.scenario import generate_scene, visible_fraction

cfg = RunConfig()
spec = cfg.scenario()
scene = generate_scene(spec, seed=3)
print(f"grid {cfg.grid.counts} voxels, image {cfg.image_hw}, {len(scene.objects)} objects")

# %% where each object lands in the two images
for i, box in enumerate(scene.objects):
    (u, v, d), = project_points(scene.infrastructure_rig, box.center[None])
    seen = visible_fraction(scene.vehicle_rig, box, spec.image_hw)
    print(f"object {i}: center ({box.x:5.1f}, {box.y:5.1f})  roadside pixel ({u:5.1f}, {v:5.1f})  "
          f"vehicle corners visible {seen:.0%}")

# %% voxel coverage: the fused mask is the union of the two
feat_hw = (cfg.image_hw[0] // FEATURE_STRIDE, cfg.image_hw[1] // FEATURE_STRIDE)
_, m_veh = sample_mask(scene.vehicle_rig, cfg.grid, feat_hw)
_, m_inf = sample_mask(scene.infrastructure_rig, cfg.grid, feat_hw)
n = m_veh.size
print(f"vehicle sees {m_veh.sum()}/{n} voxels, roadside {m_inf.sum()}, together {(m_veh | m_inf).sum()}")

# %% bird's-eye sketch: V vehicle only, I roadside only, B both, . neither
nx, ny, nz = cfg.grid.counts
v = m_veh.reshape(nx, ny, nz).any(axis=2)
r = m_inf.reshape(nx, ny, nz).any(axis=2)
chars = np.where(v & r, "B", np.where(v, "V", np.where(r, "I", ".")))
for row in chars[::-1, ::-1]:  # far x at the top, +y (left of the vehicle) on the left
    print("".join(row))
