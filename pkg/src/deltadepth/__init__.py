"""Event + LiDAR dense depth estimation with an attention-based recurrent network, in numpy."""

from .losses import MetricReport, compute_metrics, default_cutoffs, l1_loss, msg_loss, sequence_loss
from .network import VARIANTS, DeltaNetwork, NetworkConfig, NetworkState, WindowInput, build_variant, full_scale_config
from .sensors import CameraModel, EventWindow, build_event_volume, project_lidar
from .synthetic import SceneConfig, generate_sequence

__version__ = "0.1.0"

__all__ = [
    "VARIANTS",
    "CameraModel",
    "DeltaNetwork",
    "EventWindow",
    "MetricReport",
    "NetworkConfig",
    "NetworkState",
    "SceneConfig",
    "WindowInput",
    "build_event_volume",
    "build_variant",
    "compute_metrics",
    "default_cutoffs",
    "generate_sequence",
    "l1_loss",
    "msg_loss",
    "full_scale_config",
    "project_lidar",
    "sequence_loss",
]
