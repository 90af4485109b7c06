"""Procedural dynamic scenes with exact ground truth."""

from .io import list_sequences, load_dataset, load_sequence, save_dataset, save_sequence
from .render import RenderedFrame, SceneSequence, render_frame, render_sequence
from .scene import Box, CameraPath, DynamicObject, Plane, SceneSpec, Sphere, Texture, Trajectory, generate_scene

__all__ = [
    "Box",
    "CameraPath",
    "DynamicObject",
    "Plane",
    "RenderedFrame",
    "SceneSequence",
    "SceneSpec",
    "Sphere",
    "Texture",
    "Trajectory",
    "generate_scene",
    "list_sequences",
    "load_dataset",
    "load_sequence",
    "render_frame",
    "render_sequence",
    "save_dataset",
    "save_sequence",
]
