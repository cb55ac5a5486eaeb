"""Slot attention with a spatial locality prior, end to end.

Subpackages: a float64 reverse-mode autodiff engine, the slot-attention
mechanism with a pluggable spatial-bias hook, the bias CSP itself, CNN
encoder / mixture decoder, a procedural sprite dataset, segmentation
metrics, and a training/evaluation harness with a CLI.
"""

from .autodiff import Tensor
from .model import ModelConfig, SlotAutoencoder, SlpSettings
from .scenegen import SceneSpec, generate_scene, read_dataset, write_dataset
from .slot_attention import SlotAttention, SlotConfig
from .spatial_prior import BiasState, PositionGrid, run_csp

__all__ = [
    "Tensor",
    "ModelConfig",
    "SlotAutoencoder",
    "SlpSettings",
    "SceneSpec",
    "generate_scene",
    "read_dataset",
    "write_dataset",
    "SlotAttention",
    "SlotConfig",
    "BiasState",
    "PositionGrid",
    "run_csp",
]
