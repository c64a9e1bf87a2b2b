"""Contracts for the external models the attack consumes.

Real adapters (detectors, face-recognition backbones, a diffusion U-Net, a
VAE, LPIPS, a face parser) live out of tree; anything that satisfies these
protocols can be assembled into a :class:`VictimBundle`.  All image arguments
are ``(H, W, 3)`` tensors in [0, 1], latents are ``(h, w, c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import torch

from ..core import EmbeddingVector, ShapeError, SpatialMask, check_image


class VictimError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectorOutput:
    face_probs: torch.Tensor  # (J,)
    reg_offsets: torch.Tensor  # (J, 4) as [dx, dy, dw, dh]
    anchors: torch.Tensor | None = None  # (J, 4) as [cx, cy, w, h] in pixels

    def __post_init__(self):
        j = self.face_probs.shape[0]
        if self.face_probs.ndim != 1 or self.reg_offsets.shape != (j, 4):
            raise ShapeError("detector output must be probs (J,) and offsets (J, 4)")
        p = self.face_probs.detach()
        if not (torch.isfinite(p).all() and torch.isfinite(self.reg_offsets.detach()).all()):
            raise VictimError("detector produced non-finite outputs")
        if p.min() < 0 or p.max() > 1:
            raise VictimError("face probabilities must lie in [0, 1]")

    @property
    def anchor_count(self) -> int:
        return int(self.face_probs.shape[0])


@dataclass(frozen=True)
class AttentionTap:
    layer_id: str
    K: torch.Tensor  # (tokens, d)
    V: torch.Tensor  # (tokens, d)

    def __post_init__(self):
        if self.K.shape != self.V.shape or self.K.ndim != 2:
            raise ShapeError(f"K/V of layer {self.layer_id!r} must share (tokens, d)")


@dataclass(frozen=True)
class FeatureTap:
    layer_id: str
    fmap: torch.Tensor  # (H_l, W_l, C_l)


class Detector(Protocol):
    anchor_count: int

    def __call__(self, img: torch.Tensor) -> DetectorOutput: ...


class IdentityEncoder(Protocol):
    dim: int

    def __call__(self, img: torch.Tensor) -> torch.Tensor: ...

    def with_activation(self, img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Embedding plus the last spatial activation ``(h, w, c)``."""
        ...


class GenerativeBackbone(Protocol):
    attention_layers: tuple[str, ...]
    feature_layers: tuple[str, ...]
    timesteps: int
    alphas_cumprod: torch.Tensor

    def feature_resolution(self, layer_id: str) -> tuple[int, int]: ...

    def taps(
        self, cond_img: torch.Tensor, noisy_latent: torch.Tensor, t: int
    ) -> tuple[list[AttentionTap], list[FeatureTap]]: ...


class LatentCodec(Protocol):
    factor: int
    channels: int

    def encode(self, img: torch.Tensor) -> torch.Tensor: ...

    def decode(self, z: torch.Tensor) -> torch.Tensor: ...


class PerceptualDistance(Protocol):
    def __call__(self, a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]: ...


class FaceParser(Protocol):
    def __call__(self, img: torch.Tensor) -> torch.Tensor: ...


@dataclass(frozen=True)
class VictimBundle:
    """Read-only collection of every model the losses and metrics touch."""

    detector: Detector
    encoders: dict[str, IdentityEncoder]
    attack_encoders: tuple[str, ...]
    eval_encoder: str
    condition_encoder: str
    backbone: GenerativeBackbone
    codec: LatentCodec
    perceptual: PerceptualDistance
    parser: FaceParser
    image_size: tuple[int, int]
    swapper: Callable[[torch.Tensor, torch.Tensor], torch.Tensor | None] | None = None
    aligner: Callable[[torch.Tensor], torch.Tensor] | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.attack_encoders:
            raise ValueError("bundle needs at least one attack encoder")
        missing = [e for e in (*self.attack_encoders, self.eval_encoder, self.condition_encoder)
                   if e not in self.encoders]
        if missing:
            raise ValueError(f"unregistered encoder ids: {missing}")
        if self.eval_encoder in self.attack_encoders:
            raise ValueError("evaluation encoder must be held out of the attack ensemble")
        h, w = self.image_size
        f = self.codec.factor
        if h < 8 or w < 8 or h % f or w % f:
            raise ValueError(f"image size {h}x{w} incompatible with codec factor {f}")

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        h, w = self.image_size
        return (h // self.codec.factor, w // self.codec.factor, self.codec.channels)

    def _check_input(self, img: torch.Tensor) -> None:
        check_image(img)
        if tuple(img.shape[:2]) != tuple(self.image_size):
            raise ShapeError(f"bundle expects {self.image_size} images, got {tuple(img.shape[:2])}")

    def detect(self, img: torch.Tensor) -> DetectorOutput:
        self._check_input(img)
        return self.detector(img)

    def align(self, img: torch.Tensor) -> torch.Tensor:
        """Face crop resampled to the canonical frame (identity if no aligner)."""
        self._check_input(img)
        return img if self.aligner is None else self.aligner(img)

    def embed(self, img: torch.Tensor, encoder_id: str) -> EmbeddingVector:
        try:
            enc = self.encoders[encoder_id]
        except KeyError:
            raise KeyError(f"unknown encoder id {encoder_id!r}") from None
        return EmbeddingVector(enc(self.align(img)), encoder_id)

    def tap_generation(self, cond_img, noisy_latent, timestep: int):
        if not 0 <= int(timestep) < self.backbone.timesteps:
            raise ValueError(
                f"timestep {timestep} outside [0, {self.backbone.timesteps})")
        self._check_latent(noisy_latent)
        return self.backbone.taps(self.align(cond_img), noisy_latent, int(timestep))

    def _check_latent(self, z: torch.Tensor) -> None:
        if tuple(z.shape) != self.latent_shape:
            raise ShapeError(f"latent must have shape {self.latent_shape}, got {tuple(z.shape)}")
        if not torch.isfinite(z.detach()).all():
            raise VictimError("non-finite latent")

    def encode_latent(self, img: torch.Tensor) -> torch.Tensor:
        self._check_input(img)
        return self.codec.encode(img)

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        self._check_latent(z)
        return self.codec.decode(z)

    def noisy_latent(self, z0: torch.Tensor, t: int, noise: torch.Tensor) -> torch.Tensor:
        ab = self.backbone.alphas_cumprod[int(t)]
        return ab.sqrt() * z0 + (1 - ab).sqrt() * noise

    def perceptual_map(self, a: torch.Tensor, b: torch.Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        return self.perceptual(a, b)

    def parse_face(self, img: torch.Tensor) -> SpatialMask:
        self._check_input(img)
        return SpatialMask(self.parser(img), "semantic")

    def swap(self, src: torch.Tensor, tgt: torch.Tensor) -> torch.Tensor | None:
        """End-to-end face swap of ``src`` identity onto ``tgt``; None if no face."""
        if self.swapper is None:
            raise VictimError("bundle has no swap function")
        self._check_input(src)
        self._check_input(tgt)
        return self.swapper(src, tgt)

