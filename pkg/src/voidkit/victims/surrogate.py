"""Frozen, seeded miniature stand-ins for every victim interface.

The networks are tiny random conv/linear maps with smooth nonlinearities.
They carry no learned semantics; they exist so the attack and its gradients
can be exercised end to end on a laptop CPU in double precision.  Two pieces
are analytic rather than random because tests need guarantees from them:

* the detector's face score is a windowed skin-colour likelihood, so a
  synthetic face always triggers a confident anchor;
* the latent codec is a fixed Gaussian-basis linear map with a ridge
  least-squares encoder, which round-trips synthetic faces above 25 dB.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import DTYPE
from .base import AttentionTap, DetectorOutput, FeatureTap, VictimBundle
from .synthetic import SKIN_RGB

SKIN_WIDTH = 0.18
# weight correlation between identity encoders; recognizers trained for the
# same task share most of their features
ENCODER_KINSHIP = 0.8


def _nchw(img):
    return img.permute(2, 0, 1).unsqueeze(0)


def _hwc(t):
    return t.squeeze(0).permute(1, 2, 0)


def sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


def seeded_init(module: nn.Module, seed: int, dtype=DTYPE) -> nn.Module:
    """Replace every parameter with seeded draws and freeze the module."""
    g = torch.Generator().manual_seed(seed)
    module.to(dtype)
    with torch.no_grad():
        for _, p in module.named_parameters():
            if p.ndim > 1:
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=g, dtype=dtype) / math.sqrt(fan_in))
            else:
                p.copy_(0.1 * torch.randn(p.shape, generator=g, dtype=dtype))
    module.requires_grad_(False)
    module.eval()
    return module


def kindred_init(module: nn.Module, shared_seed: int, own_seed: int, kinship: float,
                 dtype=DTYPE) -> nn.Module:
    """Like :func:`seeded_init`, but weights mix a shared and a private draw.

    Each weight is ``sqrt(k) * shared + sqrt(1 - k) * own`` (scaled by
    ``1/sqrt(fan_in)``), so modules built with the same ``shared_seed`` have
    weight correlation ``k``.
    """
    if not 0 <= kinship <= 1:
        raise ValueError("kinship must lie in [0, 1]")
    module.to(dtype)
    with torch.no_grad():
        for i, (_, p) in enumerate(module.named_parameters()):
            gs = torch.Generator().manual_seed(sub_seed(shared_seed, i))
            go = torch.Generator().manual_seed(sub_seed(own_seed, i))
            shared = torch.randn(p.shape, generator=gs, dtype=dtype)
            own = torch.randn(p.shape, generator=go, dtype=dtype)
            scale = 1 / math.sqrt(p[0].numel()) if p.ndim > 1 else 0.1
            p.copy_(scale * (math.sqrt(kinship) * shared + math.sqrt(1 - kinship) * own))
    module.requires_grad_(False)
    module.eval()
    return module


def skin_likelihood(img: torch.Tensor) -> torch.Tensor:
    skin = torch.as_tensor(SKIN_RGB, dtype=img.dtype)
    return torch.exp(-((img - skin) ** 2).sum(-1) / (2 * SKIN_WIDTH**2))


def face_template(image_size=(64, 64)) -> torch.Tensor:
    """Skin-coloured ellipse on mid-grey at the canonical face position."""
    h, w = image_size
    yy, xx = torch.meshgrid(torch.arange(h, dtype=DTYPE) + 0.5,
                            torch.arange(w, dtype=DTYPE) + 0.5, indexing="ij")
    d = torch.sqrt(((xx - w / 2) / (0.275 * w)) ** 2 + ((yy - 0.53 * h) / (0.336 * h)) ** 2)
    face = torch.sigmoid((1 - d) * 17.5)[..., None]
    skin = torch.as_tensor(SKIN_RGB, dtype=DTYPE)
    return face * skin + (1 - face) * 0.5


def _stride2_stack(c_in, widths, bias=True):
    layers = []
    for c_out in widths:
        layers += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, bias=bias), nn.Tanh()]
        c_in = c_out
    return nn.Sequential(*layers)


class SurrogateDetector(nn.Module):
    """Anchor grid detector driven by a skin-likelihood map.

    Confidence is a sigmoid of the mean skin likelihood inside each anchor.
    Regression offsets come from the first and second moments of the skin map
    under a Gaussian window on the anchor, so the refined box tracks the face.
    """

    def __init__(self, image_size=(64, 64), stride=8, anchor_size=40, sharpness=12.0,
                 skin_level=0.35):
        super().__init__()
        h, w = image_size
        if h % stride or w % stride:
            raise ValueError("anchor stride must divide the image size")
        self.stride = stride
        self.anchor_size = anchor_size
        self.sharpness = sharpness
        self.skin_level = skin_level
        self.grid = (h // stride, w // stride)
        self.anchor_count = self.grid[0] * self.grid[1]
        gy, gx = torch.meshgrid(torch.arange(self.grid[0]), torch.arange(self.grid[1]), indexing="ij")
        cx = (gx.reshape(-1) * stride + stride / 2).to(DTYPE)
        cy = (gy.reshape(-1) * stride + stride / 2).to(DTYPE)
        size = torch.full_like(cx, float(anchor_size))
        self.register_buffer("anchors", torch.stack([cx, cy, size, size], 1))
        yy, xx = torch.meshgrid(torch.arange(h, dtype=DTYPE) + 0.5,
                                torch.arange(w, dtype=DTYPE) + 0.5, indexing="ij")
        self.register_buffer("xx", xx.reshape(-1))
        self.register_buffer("yy", yy.reshape(-1))
        sig = anchor_size / 2
        win = torch.exp(-((xx.reshape(1, -1) - cx[:, None]) ** 2
                          + (yy.reshape(1, -1) - cy[:, None]) ** 2) / (2 * sig**2))
        self.register_buffer("windows", win)  # (J, H*W)

    def forward(self, img):
        a, s = self.anchor_size, self.stride
        lo, hi = a // 2 - s // 2, a - s - (a // 2 - s // 2)
        skin = skin_likelihood(img)
        pooled = F.avg_pool2d(F.pad(skin[None, None], (lo, hi, lo, hi)), a, stride=s)
        probs = torch.sigmoid(self.sharpness * (pooled.reshape(-1) - self.skin_level))
        wts = self.windows.to(img.dtype) * skin.reshape(1, -1)
        mass = wts.sum(1) + 1e-6
        mx = (wts * self.xx).sum(1) / mass
        my = (wts * self.yy).sum(1) / mass
        vx = (wts * (self.xx[None] - mx[:, None]) ** 2).sum(1) / mass
        vy = (wts * (self.yy[None] - my[:, None]) ** 2).sum(1) / mass
        anc = self.anchors.to(img.dtype)
        # a uniform ellipse of full width W has variance W^2 / 16
        reg = torch.stack([(mx - anc[:, 0]) / anc[:, 2], (my - anc[:, 1]) / anc[:, 3],
                           torch.log(4 * torch.sqrt(vx + 1e-6) / anc[:, 2]),
                           torch.log(4 * torch.sqrt(vy + 1e-6) / anc[:, 3])], 1)
        return DetectorOutput(probs, reg, anc)


class SurrogateEncoder(nn.Module):
    """Three stride-2 conv layers, then a linear map of the flattened activation.

    Inputs are taken relative to a canonical face template and weighted by a
    Gaussian window around the canonical face position, standing in for the
    aligned, normalized crop a real recognizer receives.  Without biases the
    template itself maps to the zero embedding, so embeddings describe how a
    face deviates from the average one.
    """

    def __init__(self, image_size=(64, 64), dim=32, window=0.28):
        super().__init__()
        self.dim = dim
        h, w = image_size
        yy, xx = torch.meshgrid(torch.arange(h, dtype=DTYPE) + 0.5,
                                torch.arange(w, dtype=DTYPE) + 0.5, indexing="ij")
        win = torch.exp(-(((xx - w / 2) / (window * w)) ** 2 + ((yy - 0.53 * h) / (window * h)) ** 2))
        self.register_buffer("window", win[None, None])
        self.register_buffer("template", _nchw(face_template(image_size)))
        self.body = _stride2_stack(3, [12, 16, 24], bias=False)
        h, w = image_size[0] // 8, image_size[1] // 8
        self.fc = nn.Linear(24 * h * w, dim, bias=False)

    def with_activation(self, img):
        """Pre-normalization embedding and the last spatial activation (h, w, C)."""
        act = _hwc(self.body(2 * (_nchw(img) - self.template.to(img.dtype))
                             * self.window.to(img.dtype)))
        return self.fc(act.permute(2, 0, 1).reshape(-1)), act

    def forward(self, img):
        raw = self.with_activation(img)[0]
        return raw / torch.linalg.vector_norm(raw).clamp(min=1e-12)


class CrossAttention(nn.Module):
    def __init__(self, width, token_dim, d=16):
        super().__init__()
        self.d = d
        self.q = nn.Linear(width, d, bias=False)
        self.k = nn.Linear(token_dim, d, bias=False)
        self.v = nn.Linear(token_dim, d, bias=False)
        self.out = nn.Linear(d, width, bias=False)

    def forward(self, h, tokens):
        # h: (1, C, H, W); tokens: (n, token_dim)
        _, c, hh, ww = h.shape
        pix = h.reshape(c, hh * ww).T
        q, k, v = self.q(pix), self.k(tokens), self.v(tokens)
        attn = torch.softmax(q @ k.T / math.sqrt(self.d), dim=-1) @ v
        return self.out(attn).T.reshape(1, c, hh, ww), k, v


def cosine_alphas_cumprod(timesteps: int, dtype=DTYPE) -> torch.Tensor:
    t = torch.arange(1, timesteps + 1, dtype=dtype) / timesteps
    ab = torch.cos((t + 0.008) / 1.008 * math.pi / 2) ** 2
    return ab.clamp(min=0.02)


class SurrogateBackbone(nn.Module):
    """Two-level conditional U-Net with a cross-attention in each level."""

    def __init__(self, cond_encoder, latent_channels=4, width=16, n_tokens=4,
                 token_dim=16, timesteps=10, attention_layers=("down.attn", "up.attn"),
                 feature_layers=("down", "up"), latent_hw=(8, 8)):
        super().__init__()
        if len(attention_layers) != 2 or len(feature_layers) != 2:
            raise ValueError("surrogate backbone has exactly two attention and two feature layers")
        self.cond_encoder = cond_encoder
        self.attention_layers = tuple(attention_layers)
        self.feature_layers = tuple(feature_layers)
        self.timesteps = timesteps
        self.latent_hw = tuple(latent_hw)
        self.n_tokens, self.token_dim = n_tokens, token_dim
        self.token_proj = nn.Linear(cond_encoder.dim, n_tokens * token_dim)
        self.t_embed = nn.Linear(8, width)
        self.conv_in = nn.Conv2d(latent_channels, width, 3, padding=1)
        self.attn_down = CrossAttention(width, token_dim)
        self.down = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(2 * width, 2 * width, 3, padding=1)
        self.up = nn.Conv2d(3 * width, width, 3, padding=1)
        self.attn_up = CrossAttention(width, token_dim)
        self.conv_out = nn.Conv2d(width, latent_channels, 3, padding=1)
        self.register_buffer("alphas_cumprod", cosine_alphas_cumprod(timesteps))

    def feature_resolution(self, layer_id):
        if layer_id not in self.feature_layers:
            raise KeyError(layer_id)
        return self.latent_hw

    def _time_features(self, t, dtype):
        freqs = torch.tensor([1.0, 0.5, 0.25, 0.125], dtype=dtype)
        ang = float(t) * freqs
        return torch.cat([torch.sin(ang), torch.cos(ang)])

    def run(self, cond_img, noisy_latent, t):
        tokens = self.token_proj(self.cond_encoder(cond_img)).reshape(self.n_tokens, self.token_dim)
        temb = self.t_embed(self._time_features(t, noisy_latent.dtype))[None, :, None, None]
        h = torch.tanh(self.conv_in(_nchw(noisy_latent)) + temb)
        a, k1, v1 = self.attn_down(h, tokens)
        f_down = h + a
        m = torch.tanh(self.mid(torch.tanh(self.down(f_down))))
        u = F.interpolate(m, size=f_down.shape[-2:], mode="nearest")
        u = torch.tanh(self.up(torch.cat([u, f_down], 1)))
        a, k2, v2 = self.attn_up(u, tokens)
        f_up = u + a
        eps = self.conv_out(f_up)
        attn = [AttentionTap(self.attention_layers[0], k1, v1),
                AttentionTap(self.attention_layers[1], k2, v2)]
        feats = [FeatureTap(self.feature_layers[0], _hwc(f_down)),
                 FeatureTap(self.feature_layers[1], _hwc(f_up))]
        return attn, feats, _hwc(eps)

    def taps(self, cond_img, noisy_latent, t):
        attn, feats, _ = self.run(cond_img, noisy_latent, t)
        return attn, feats


class SurrogateCodec(nn.Module):
    """Linear Gaussian-basis decoder with a ridge least-squares encoder.

    Latent channels 0-2 carry colour on the cell-centre lattice; channel 3
    carries luminance on the lattice shifted by half a cell, which roughly
    doubles luminance sampling density.
    """

    def __init__(self, image_size=(64, 64), factor=8, color_sigma=5.5, luma_sigma=4.5, ridge=1e-2):
        super().__init__()
        self.factor, self.channels = factor, 4
        self.image_size = tuple(image_size)
        h, w = image_size
        gh, gw = h // factor, w // factor
        yy, xx = np.mgrid[0:h, 0:w] + 0.5
        cols = []
        for i in range(gh):
            for j in range(gw):
                cy, cx = factor * i + factor / 2, factor * j + factor / 2
                g = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * color_sigma**2))
                for c in range(3):
                    v = np.zeros((h, w, 3))
                    v[..., c] = g
                    cols.append(v.ravel())
                g = np.exp(-((xx - cx - factor / 2) ** 2 + (yy - cy - factor / 2) ** 2)
                           / (2 * luma_sigma**2))
                cols.append(np.repeat(g[..., None], 3, axis=2).ravel())
        basis = np.stack(cols, 1)
        enc = np.linalg.solve(basis.T @ basis + ridge * np.eye(basis.shape[1]), basis.T)
        self.register_buffer("basis", torch.from_numpy(basis))
        self.register_buffer("enc", torch.from_numpy(enc))
        self.latent_shape = (gh, gw, self.channels)

    def encode(self, img):
        return (self.enc.to(img.dtype) @ (img.reshape(-1) - 0.5)).reshape(self.latent_shape)

    def decode(self, z):
        x = self.basis.to(z.dtype) @ z.reshape(-1) + 0.5
        return x.reshape(*self.image_size, 3).clamp(0.0, 1.0)


class SurrogatePerceptual(nn.Module):
    """LPIPS-style distance: unit-normalized random features at two scales.

    Per-pixel squared differences of channel-normalized features lie in
    [0, 4]; the map averages both scales and divides by 4 so it is in [0, 1].
    """

    def __init__(self, width=8):
        super().__init__()
        self.l1 = nn.Conv2d(3, width, 5, padding=2)
        self.l2 = nn.Conv2d(width, width, 3, stride=2, padding=1)

    def _features(self, img):
        f1 = torch.tanh(self.l1(_nchw(img) * 2 - 1))
        f2 = torch.tanh(self.l2(f1))
        return [f / (f.norm(dim=1, keepdim=True) + 1e-10) for f in (f1, f2)]

    def forward(self, a, b):
        maps = []
        for fa, fb in zip(self._features(a), self._features(b)):
            d = ((fa - fb) ** 2).mean(1, keepdim=True) * fa.shape[1] / 4.0
            maps.append(F.interpolate(d, size=a.shape[:2], mode="bilinear", align_corners=False))
        dmap = (sum(maps) / len(maps))[0, 0].clamp(0.0, 1.0)
        return dmap.mean(), dmap


# component ellipses as (rel_x, rel_y, rel_rx, rel_ry) of the face box
PARSER_COMPONENTS = (
    (0.30, 0.40, 0.13, 0.08),  # left eye
    (0.70, 0.40, 0.13, 0.08),  # right eye
    (0.50, 0.56, 0.08, 0.11),  # nose
    (0.50, 0.75, 0.19, 0.08),  # mouth
)


class GeometricParser:
    """Places canonical eye/nose/mouth ellipses inside the skin bounding box."""

    def __init__(self, min_fraction=0.02):
        self.min_fraction = min_fraction

    def __call__(self, img):
        with torch.no_grad():
            skin = skin_likelihood(img) > 0.5
        h, w = skin.shape
        mask = torch.zeros(h, w, dtype=img.dtype)
        if skin.sum() < self.min_fraction * h * w:
            return mask
        rows = torch.nonzero(skin.any(1)).flatten()
        cols = torch.nonzero(skin.any(0)).flatten()
        y0, y1 = float(rows[0]), float(rows[-1]) + 1
        x0, x1 = float(cols[0]), float(cols[-1]) + 1
        bw, bh = x1 - x0, y1 - y0
        yy, xx = torch.meshgrid(torch.arange(h, dtype=img.dtype) + 0.5,
                                torch.arange(w, dtype=img.dtype) + 0.5, indexing="ij")
        for rx, ry, rrx, rry in PARSER_COMPONENTS:
            cx, cy = x0 + rx * bw, y0 + ry * bh
            inside = ((xx - cx) / (rrx * bw)) ** 2 + ((yy - cy) / (rry * bh)) ** 2 <= 1
            mask[inside] = 1.0
        return mask


def top_box(det: DetectorOutput) -> torch.Tensor:
    """Refined ``[cx, cy, w, h]`` of the most confident anchor."""
    j = int(torch.argmax(det.face_probs))
    cx, cy, aw, ah = det.anchors[j]
    dx, dy, dw, dh = det.reg_offsets[j]
    return torch.stack([cx + dx * aw, cy + dy * ah, aw * torch.exp(dw), ah * torch.exp(dh)])


def warp_box(img, src_box, dst_box):
    """Resample ``img`` so the content of ``src_box`` lands on ``dst_box``.

    Bicubic rather than bilinear: bilinear sampling is only piecewise linear
    in the box coordinates, and its kinks break finite-difference checks of
    every loss that looks at an aligned crop.  Values are left unclamped.
    """
    h, w, _ = img.shape
    sx, sy = src_box[2] / dst_box[2], src_box[3] / dst_box[3]
    # normalized coords n = 2c/size - 1 for continuous pixel coordinate c
    tx = (2 * src_box[0] / w - 1) - sx * (2 * dst_box[0] / w - 1)
    ty = (2 * src_box[1] / h - 1) - sy * (2 * dst_box[1] / h - 1)
    zero = torch.zeros((), dtype=img.dtype)
    theta = torch.stack([torch.stack([sx, zero, tx]), torch.stack([zero, sy, ty])])[None]
    grid = F.affine_grid(theta, (1, 3, h, w), align_corners=False)
    out = F.grid_sample(_nchw(img), grid, mode="bicubic", padding_mode="border", align_corners=False)
    return _hwc(out)


def canonical_box(image_size=(64, 64), dtype=DTYPE) -> torch.Tensor:
    """``[cx, cy, w, h]`` the detector reports for a face placed like :func:`face_template`.

    Measured once on synthetic faces; it sits slightly below and outside the
    template ellipse because the skin moments include the neck-side shading.
    """
    h, w = image_size
    return torch.tensor([0.5 * w, 0.555 * h, 0.57 * w, 0.665 * h], dtype=dtype)


class FaceAligner:
    """Warp the top-confidence refined box onto the canonical box."""

    def __init__(self, detector, image_size=(64, 64)):
        self.detector = detector
        self.canon = canonical_box(image_size)

    def box(self, img):
        return top_box(self.detector(img))

    def __call__(self, img, box=None):
        box = self.box(img) if box is None else box
        return warp_box(img, box, self.canon.to(img.dtype))


class SurrogateSwapper:
    """detect -> align -> embed -> one conditioned generation pass -> decode.

    Identity is injected into the target as the smallest face-region edit
    that moves the target's aligned conditioning embedding onto the source's
    (one ridge-regularized Gauss-Newton step).  The backbone, conditioned on
    the aligned source and the noised target latent, adds its decoded,
    ``gain``-scaled prediction.  Returns None when no source anchor clears
    ``threshold``.
    """

    def __init__(self, aligner, encoder, backbone, codec, threshold=0.5, gain=0.02, ridge=1e-2,
                 timestep=None, seed=0):
        self.aligner, self.encoder, self.backbone, self.codec = aligner, encoder, backbone, codec
        self.threshold, self.gain, self.ridge = threshold, gain, ridge
        self.timestep = backbone.timesteps // 2 if timestep is None else timestep
        g = torch.Generator().manual_seed(seed)
        gh, gw, c = codec.latent_shape
        self.noise = torch.randn(gh, gw, c, generator=g, dtype=DTYPE)

    def _face_mask(self, box):
        h, w = self.codec.image_size
        yy, xx = torch.meshgrid(torch.arange(h, dtype=box.dtype) + 0.5,
                                torch.arange(w, dtype=box.dtype) + 0.5, indexing="ij")
        d = ((xx - box[0]) / (0.5 * box[2])) ** 2 + ((yy - box[1]) / (0.5 * box[3])) ** 2
        return torch.sigmoid(4.0 * (1.0 - d))[..., None]

    def inject_identity(self, tgt, emb, box):
        def f(x):
            return self.encoder(self.aligner(x, box))

        e_t = f(tgt)
        mask = self._face_mask(box)
        J = torch.autograd.functional.jacobian(f, tgt, vectorize=True)
        J = (J * mask).reshape(e_t.shape[0], -1)
        gram = J @ J.T + self.ridge * torch.eye(J.shape[0], dtype=J.dtype)
        return tgt + (J.T @ torch.linalg.solve(gram, emb - e_t)).reshape(tgt.shape), mask

    def __call__(self, src, tgt):
        with torch.no_grad():
            if float(self.aligner.detector(src).face_probs.max()) <= self.threshold:
                return None
            crop = self.aligner(src)
            emb = self.encoder(crop)
            box_t = self.aligner.box(tgt)
            z_tgt = self.codec.encode(tgt)
            ab = self.backbone.alphas_cumprod[self.timestep]
            z_t = ab.sqrt() * z_tgt + (1 - ab).sqrt() * self.noise.to(src.dtype)
            _, _, eps = self.backbone.run(crop, z_t, self.timestep)
            # decode is affine around the mid-grey zero latent
            residual = self.codec.decode(self.gain * eps) - self.codec.decode(torch.zeros_like(eps))
        out, mask = self.inject_identity(tgt, emb, box_t)
        return (out + mask * residual).clamp(0.0, 1.0).detach()


def build_surrogate_bundle(manifest=None) -> VictimBundle:
    """Assemble a seeded surrogate bundle from a manifest (defaults if None)."""
    from .manifest import BundleManifest

    man = manifest or BundleManifest()
    size = (man.image_size, man.image_size)
    seed = man.seed
    detector = seeded_init(SurrogateDetector(size, man.anchor_stride, man.anchor_size), sub_seed(seed, 1))
    encoders = {}
    for k, spec in enumerate(man.encoders):
        encoders[spec.id] = kindred_init(SurrogateEncoder(size, spec.dim), sub_seed(seed, 2),
                                         sub_seed(seed, 2, k), ENCODER_KINSHIP)
    cond = encoders[man.condition_encoder]
    gh = man.image_size // man.codec_factor
    backbone = SurrogateBackbone(cond, man.latent_channels, timesteps=man.timesteps,
                                 attention_layers=man.attention_layers,
                                 feature_layers=man.feature_layers, latent_hw=(gh, gh))
    # the conditioning encoder is shared; re-seeding the backbone must not touch it
    backbone.cond_encoder = None
    seeded_init(backbone, sub_seed(seed, 3))
    backbone.cond_encoder = cond
    codec = SurrogateCodec(size, man.codec_factor).to(DTYPE)
    if man.latent_channels != codec.channels:
        raise ValueError("surrogate codec supports exactly 4 latent channels")
    perceptual = seeded_init(SurrogatePerceptual(), sub_seed(seed, 4))
    aligner = FaceAligner(detector, size)
    swapper = SurrogateSwapper(aligner, cond, backbone, codec, seed=sub_seed(seed, 5))
    return VictimBundle(
        detector=detector,
        encoders=encoders,
        attack_encoders=tuple(e.id for e in man.encoders if e.role == "attack"),
        eval_encoder=next(e.id for e in man.encoders if e.role == "eval"),
        condition_encoder=man.condition_encoder,
        backbone=backbone,
        codec=codec,
        perceptual=perceptual,
        parser=GeometricParser(),
        image_size=size,
        swapper=swapper,
        aligner=aligner,
        seed=seed,
        meta={"manifest": man},
    )
