"""Seeded cartoon faces for desk-scale runs.

Every face is a soft skin ellipse with eyes, brows, nose shading and a mouth
over a non-skin background.  Geometry and colours vary with the seed so the
surrogate encoders see distinct identities.  Output is already 8-bit
quantized, like anything loaded from disk.
"""

from __future__ import annotations

import numpy as np
import torch

from ..core import DTYPE, dequantize_u8, quantize_u8

SKIN_RGB = np.array([0.80, 0.60, 0.48])


def _soft_ellipse(xx, yy, cx, cy, ax, ay, edge=1.0):
    # signed distance approximated in pixels along the minor axis
    d = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    return 1.0 / (1.0 + np.exp((d - 1.0) * min(ax, ay) / edge))


def _blend(canvas, color, alpha):
    return canvas * (1 - alpha[..., None]) + np.asarray(color) * alpha[..., None]


def _background_color(rng):
    while True:
        c = rng.uniform(0.12, 0.9, 3)
        if np.linalg.norm(c - SKIN_RGB) > 0.4:
            return c


def synthetic_face_u8(seed: int, size: int = 64) -> np.ndarray:
    rng = np.random.default_rng(seed)
    s = size / 64.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5

    c1, c2 = _background_color(rng), _background_color(rng)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = ((xx - size / 2) * np.cos(theta) + (yy - size / 2) * np.sin(theta)) / size + 0.5
    img = c1 * (1 - ramp[..., None]) + c2 * ramp[..., None]
    for _ in range(3):
        k = rng.uniform(0.5, 2.5, 2) * 2 * np.pi / size
        img += 0.03 * np.sin(k[0] * xx + k[1] * yy + rng.uniform(0, 2 * np.pi))[..., None]

    cx = size / 2 + rng.uniform(-3, 3) * s
    cy = size / 2 + 2 * s + rng.uniform(-2, 2) * s
    ax = rng.uniform(16, 19) * s
    ay = rng.uniform(20, 23) * s

    hair = rng.uniform(0.05, 0.45) * rng.uniform(0.6, 1.0, 3)
    img = _blend(img, hair, _soft_ellipse(xx, yy, cx, cy - 5 * s, ax + 3 * s, ay + 2 * s))

    skin = np.clip(SKIN_RGB + rng.uniform(-0.05, 0.05, 3), 0, 1)
    face = _soft_ellipse(xx, yy, cx, cy, ax, ay)
    shade = 1.0 - 0.1 * ((xx - cx) / ax) ** 2
    img = img * (1 - face[..., None]) + (skin * shade[..., None]) * face[..., None]

    ex = rng.uniform(6, 8.5) * s
    ey = rng.uniform(3.5, 6) * s
    eye_w, eye_h = rng.uniform(3.0, 4.2) * s, rng.uniform(1.8, 2.6) * s
    iris = rng.uniform(0.1, 0.45, 3)
    for side in (-1, 1):
        ecx, ecy = cx + side * ex, cy - ey
        img = _blend(img, (0.93, 0.92, 0.9), _soft_ellipse(xx, yy, ecx, ecy, eye_w, eye_h, 0.7))
        img = _blend(img, iris, _soft_ellipse(xx, yy, ecx, ecy, eye_h * 0.9, eye_h * 0.9, 0.6))
        img = _blend(img, hair, 0.9 * _soft_ellipse(
            xx, yy, ecx, ecy - eye_h - 2.5 * s, eye_w * 1.1, 0.9 * s, 0.6))

    nose = np.exp(-(((xx - cx) / (2.2 * s)) ** 2 + ((yy - cy - 2 * s) / (4.0 * s)) ** 2))
    img = img * (1 - 0.18 * nose[..., None])

    my = cy + rng.uniform(9, 12) * s
    lips = np.clip(np.array([0.72, 0.3, 0.32]) + rng.uniform(-0.08, 0.08, 3), 0, 1)
    img = _blend(img, lips, _soft_ellipse(
        xx, yy, cx, my, rng.uniform(4.5, 7) * s, rng.uniform(1.5, 2.6) * s, 0.7))

    return quantize_u8(np.clip(img, 0.04, 0.96))


def synthetic_face(seed: int, size: int = 64, dtype=DTYPE) -> torch.Tensor:
    return dequantize_u8(synthetic_face_u8(seed, size), dtype)
