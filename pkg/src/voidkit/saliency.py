"""Confinement masks: confident anchors, parsed face components, Layer-CAM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .core import SpatialMask
from .victims.base import DetectorOutput, VictimBundle

log = logging.getLogger(__name__)


def anchor_mask(det: DetectorOutput, tau_p: float) -> SpatialMask:
    """Binary vector over anchors: 1 where the face probability exceeds ``tau_p``."""
    if not 0 < tau_p < 1:
        raise ValueError("tau_p must lie in (0, 1)")
    m = (det.face_probs.detach() > tau_p).to(det.face_probs.dtype)
    if not m.any():
        log.warning("no anchor exceeds tau_p=%.3f; localization term disabled", tau_p)
    return SpatialMask(m, "anchor")


def downsample_mask(mask, target_hw) -> torch.Tensor:
    """Area-average a 2-D mask to ``target_hw``."""
    data = mask.data if isinstance(mask, SpatialMask) else mask
    th, tw = target_hw
    if th <= 0 or tw <= 0:
        raise ValueError(f"target size must be positive, got {target_hw}")
    if tuple(data.shape) == (th, tw):
        return data.clone()
    return F.adaptive_avg_pool2d(data[None, None], (th, tw))[0, 0]


def cam_mask(bundle: VictimBundle, img: torch.Tensor, encoder_id: str) -> SpatialMask:
    """Layer-CAM heatmap of an identity encoder, upsampled and scaled to [0, 1].

    The scalar target is the squared norm of the embedding; the activation is
    the encoder's last spatial layer.
    """
    enc = bundle.encoders[encoder_id]
    if not hasattr(enc, "with_activation"):
        raise TypeError(f"encoder {encoder_id!r} exposes no spatial activations")
    with torch.enable_grad():
        # input must be on the tape so the activation is a differentiable node
        x = img.detach().clone().requires_grad_(True)
        emb, act = enc.with_activation(x)
        if act.ndim != 3:
            raise TypeError(f"encoder {encoder_id!r} activation is not spatial")
        (grad,) = torch.autograd.grad((emb**2).sum(), act)
    act = act.detach()
    cam = torch.relu((torch.relu(grad) * act).sum(-1))
    cam = F.interpolate(cam[None, None], size=tuple(img.shape[:2]), mode="bilinear",
                        align_corners=False)[0, 0].clamp(min=0.0)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return SpatialMask(cam, "cam")


@dataclass(frozen=True)
class MaskSet:
    anchor: SpatialMask
    semantic: SpatialMask
    cam: SpatialMask
    per_layer: dict = field(default_factory=dict)  # layer -> {"sem": t, "cam": t}

    @property
    def loc_enabled(self) -> bool:
        return bool(self.anchor.data.any())


def build_mask_set(bundle: VictimBundle, x_src: torch.Tensor, tau_p: float,
                   cam_encoder: str | None = None) -> MaskSet:
    """Compute every mask once from the clean source image."""
    with torch.no_grad():
        det = bundle.detect(x_src)
    anchor = anchor_mask(det, tau_p)
    semantic = bundle.parse_face(x_src)
    cam = cam_mask(bundle, x_src, cam_encoder or bundle.condition_encoder)
    per_layer = {}
    for layer in bundle.backbone.feature_layers:
        hw = bundle.backbone.feature_resolution(layer)
        per_layer[layer] = {"sem": downsample_mask(semantic, hw), "cam": downsample_mask(cam, hw)}
    return MaskSet(anchor, semantic, cam, per_layer)
