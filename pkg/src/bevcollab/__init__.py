"""Desk-scale aerial-ground collaborative BEV perception sandbox."""

__version__ = "0.1.0"

from .bevlift import BevFeature, bev_gt_heatmap, lift_splat
from .cdca import AttentionConfig, fuse
from .config import ConfigError, RunConfig, validate_config
from .depthcrf import (
    CrfParams,
    DepthBins,
    DepthDistribution,
    crf_energy,
    cross_domain_correspondence,
    make_depth_bins,
    mean_field_refine,
)
from .detector import Box3D, decode
from .errors import CapacityError
from .geometry import BevGrid, CameraModel, make_camera
from .metrics import MetricsConfig, MetricsReport, evaluate, nds
from .pipeline import ablate, run
from .scenesim import (
    AgentFrame,
    NoiseConfig,
    Scene,
    SceneConfig,
    SceneObject,
    generate_scene,
    render_agent_frame,
)

__all__ = [
    "AgentFrame",
    "AttentionConfig",
    "BevFeature",
    "BevGrid",
    "Box3D",
    "CameraModel",
    "CapacityError",
    "ConfigError",
    "CrfParams",
    "DepthBins",
    "DepthDistribution",
    "MetricsConfig",
    "MetricsReport",
    "NoiseConfig",
    "RunConfig",
    "Scene",
    "SceneConfig",
    "SceneObject",
    "ablate",
    "bev_gt_heatmap",
    "crf_energy",
    "cross_domain_correspondence",
    "decode",
    "evaluate",
    "fuse",
    "generate_scene",
    "lift_splat",
    "make_camera",
    "make_depth_bins",
    "mean_field_refine",
    "nds",
    "render_agent_frame",
    "run",
    "validate_config",
]
