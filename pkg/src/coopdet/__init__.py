"""Cooperative vehicle-infrastructure camera 3D detection on a small numpy autodiff core."""
from .compression import CompressionConfig, FeatureCompressor, WirePacket, average_byte
from .config import RunConfig
from .geometry import Box3D, CameraRig, VoxelGrid, project, sample_voxels, unproject
from .metrics import EvalReport, average_precision, bev_iou, iou3d
from .pipeline import CooperativeDetector, evaluate, train
from .scenario import Scene, ScenarioSpec, apply_translation_noise, generate_scene

__version__ = "0.1.0"

__all__ = [
    "Box3D", "CameraRig", "CompressionConfig", "CooperativeDetector", "EvalReport",
    "FeatureCompressor", "RunConfig", "Scene", "ScenarioSpec", "VoxelGrid", "WirePacket",
    "apply_translation_noise", "average_byte", "average_precision", "bev_iou", "evaluate",
    "generate_scene", "iou3d", "project", "sample_voxels", "train", "unproject",
]
