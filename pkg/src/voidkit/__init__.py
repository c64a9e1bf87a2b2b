"""Adversarial immunization of face images against diffusion face swapping."""

from .core import (
    DTYPE,
    EmbeddingVector,
    ImageTensor,
    LossWeights,
    PerturbationBudget,
    ShapeError,
    SpatialMask,
    dequantize_u8,
    load_image,
    project_linf,
    quantize_u8,
    save_png,
)
from .losses import AttackObjective, LossReport, NonFiniteGradient, grad_total, loss_total
from .optimizer import AdaptiveConfig, ProtectResult, RunState, protect
from .victims import BundleManifest, build_surrogate_bundle, synthetic_face

__version__ = "0.1.0"

__all__ = [
    "DTYPE", "EmbeddingVector", "ImageTensor", "LossWeights", "PerturbationBudget", "ShapeError",
    "SpatialMask", "dequantize_u8", "load_image", "project_linf", "quantize_u8", "save_png",
    "AttackObjective", "LossReport", "NonFiniteGradient", "grad_total", "loss_total",
    "AdaptiveConfig", "ProtectResult", "RunState", "protect",
    "BundleManifest", "build_surrogate_bundle", "synthetic_face",
]
