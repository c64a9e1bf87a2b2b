"""Shared value types, pixel conventions and the L-infinity budget.

Images are ``(H, W, 3)`` tensors of unit-interval reals.  The only external
form is 8-bit RGB, so every budget expressed as ``k/255`` is exact at the
file boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

DTYPE = torch.float64

MASK_KINDS = ("anchor", "semantic", "cam", "perceptual-binary", "perceptual-smooth")
BINARY_MASK_KINDS = ("anchor", "perceptual-binary")


class ShapeError(ValueError):
    pass


def check_image(data: torch.Tensor, min_side: int = 8) -> torch.Tensor:
    """Validate an ``(H, W, 3)`` unit-interval image tensor and return it."""
    if data.ndim != 3 or data.shape[-1] != 3:
        raise ShapeError(f"image must have shape (H, W, 3), got {tuple(data.shape)}")
    h, w, _ = data.shape
    if h < min_side or w < min_side:
        raise ShapeError(f"image sides must be >= {min_side}, got {h}x{w}")
    d = data.detach()
    if not torch.isfinite(d).all():
        raise ValueError("image contains non-finite values")
    if d.min() < 0 or d.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    return data


@dataclass(frozen=True)
class ImageTensor:
    """An RGB image with values in [0, 1]."""

    data: torch.Tensor

    def __post_init__(self):
        check_image(self.data)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @classmethod
    def from_u8(cls, arr: np.ndarray) -> "ImageTensor":
        return cls(dequantize_u8(arr))

    def to_u8(self) -> np.ndarray:
        return quantize_u8(self.data)

    @classmethod
    def load(cls, path) -> "ImageTensor":
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
        return cls.from_u8(arr)

    def save(self, path) -> None:
        save_png(self.data, path)


def quantize_u8(img) -> np.ndarray:
    """Map unit-interval values to bytes with ``round(v * 255)``."""
    if isinstance(img, ImageTensor):
        img = img.data
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    if isinstance(img, np.ndarray) and img.dtype == np.uint8:
        return img.copy()
    arr = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def dequantize_u8(arr: np.ndarray, dtype=DTYPE) -> torch.Tensor:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise TypeError(f"expected uint8 array, got {arr.dtype}")
    return torch.from_numpy(arr.astype(np.float64) / 255.0).to(dtype)


def save_png(img, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = quantize_u8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def load_image(path, dtype=DTYPE) -> torch.Tensor:
    return ImageTensor.load(path).data.to(dtype)


def project_linf(x: torch.Tensor, center: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Clamp ``x`` into ``[center - eps, center + eps]`` intersected with [0, 1]."""
    if x.shape != center.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(center.shape)}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    lo = torch.clamp(center - epsilon, min=0.0)
    hi = torch.clamp(center + epsilon, max=1.0)
    return torch.minimum(torch.maximum(x, lo), hi)


@dataclass(frozen=True)
class SpatialMask:
    data: torch.Tensor
    kind: str

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        d = self.data.detach()
        if d.numel() and (d.min() < 0 or d.max() > 1):
            raise ValueError(f"{self.kind} mask values must lie in [0, 1]")
        if self.kind in BINARY_MASK_KINDS and not torch.all((d == 0) | (d == 1)):
            raise ValueError(f"{self.kind} mask must be binary")


@dataclass(frozen=True)
class PerturbationBudget:
    epsilon: float = 12 / 255
    alpha: float = 1 / 255
    iterations: int = 30

    def __post_init__(self):
        if not 0 < self.alpha <= self.epsilon:
            raise ValueError("budget requires 0 < alpha <= epsilon")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    @property
    def epsilon_bytes(self) -> int:
        return int(round(self.epsilon * 255))


@dataclass(frozen=True)
class LossWeights:
    """Signed coefficients of the combined objective.

    Localization and identity terms are minimized (negative weights) while the
    attention and feature terms are maximized (positive weights).
    """

    loc: float = -1.0
    id: float = -1.0
    attn: float = 0.01
    feat: float = 0.01

    def __post_init__(self):
        if not (self.loc < 0 and self.id < 0 and self.attn > 0 and self.feat > 0):
            raise ValueError(
                "weights must satisfy loc < 0, id < 0, attn > 0, feat > 0; "
                f"got {self.as_tuple()}"
            )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.loc, self.id, self.attn, self.feat)


@dataclass(frozen=True)
class EmbeddingVector:
    data: torch.Tensor
    source_encoder: str

    def __post_init__(self):
        if self.data.ndim != 1:
            raise ShapeError("embedding must be one-dimensional")
        if not torch.isfinite(self.data.detach()).all():
            raise ValueError(f"non-finite embedding from {self.source_encoder!r}")

    @property
    def dim(self) -> int:
        return int(self.data.shape[0])
