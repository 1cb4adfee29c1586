"""Procedural multi-view dataset: scenes, cameras, renderer, writer."""

from .camera import CameraPose, camera_rays, project_points, sample_camera_arc
from .scene import SceneSpec, sample_scene
from .render import render_pair
from .dataset import DatasetConfig, generate_dataset

__all__ = [
    "CameraPose",
    "camera_rays",
    "project_points",
    "sample_camera_arc",
    "SceneSpec",
    "sample_scene",
    "render_pair",
    "DatasetConfig",
    "generate_dataset",
]
