"""Desk-scale virtual try-on pipeline: masked-cloth pretraining, semantic
layout prediction, constrained TPS warping, and compositing synthesis."""

from .config import PipelineConfig, load_config
from .data import (
    LabelSchema,
    PoseKeypoints,
    SemanticMask,
    TryOnSample,
    load_dataset,
    render_pose_heatmap,
    synth_fixture,
)
from .errors import VtonError

__all__ = [
    "PipelineConfig",
    "load_config",
    "LabelSchema",
    "PoseKeypoints",
    "SemanticMask",
    "TryOnSample",
    "load_dataset",
    "render_pose_heatmap",
    "synth_fixture",
    "VtonError",
]

__version__ = "0.1.0"
