"""The four disruption terms and their signed combination.

Each term takes the (projected) adversarial image and compares it against
quantities frozen on the clean source:

* ``loc``  - exp(-||masked regression offset shift||), pushed down;
* ``id``   - cosine distance to a black-image embedding plus a margin hinge
  on the distance to the source embedding, averaged over the attack
  ensemble, pushed down;
* ``attn`` - summed norms of cross-attention key/value shifts, pushed up;
* ``feat`` - summed norms of mask-confined backbone feature shifts, pushed up.

Norms are Frobenius norms over all (masked) elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import DTYPE, LossWeights, ShapeError, project_linf
from .saliency import MaskSet, build_mask_set
from .victims.base import AttentionTap, FeatureTap, VictimBundle

TERMS = ("loc", "id", "attn", "feat")


class NonFiniteGradient(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"non-finite gradient from loss term {term!r}")
        self.term = term


def frob(t: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(t.reshape(-1))


def cosine_distance(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    nu, nv = frob(u), frob(v)
    if float(nu.detach()) == 0.0 or float(nv.detach()) == 0.0:
        raise ZeroDivisionError("cosine distance undefined for a zero-norm embedding")
    return 1 - (u * v).sum() / (nu * nv)


def loss_loc(reg_adv: torch.Tensor, reg_src: torch.Tensor, anchor_mask: torch.Tensor) -> torch.Tensor:
    if reg_adv.shape != reg_src.shape:
        raise ShapeError("regression outputs differ in shape")
    return torch.exp(-frob((reg_adv - reg_src) * anchor_mask[:, None]))


def loss_id(emb_adv, emb_src, emb_null, margin: float):
    """Identity-erasure value and its hinge part, averaged over encoders.

    Arguments are sequences of embeddings aligned by encoder.
    """
    if not 0 < margin < 2:
        raise ValueError("margin must lie in (0, 2)")
    vals, hinges = [], []
    for a, s, n in zip(emb_adv, emb_src, emb_null):
        hinge = torch.clamp(margin - cosine_distance(a, s), min=0.0)
        vals.append(cosine_distance(a, n) + hinge)
        hinges.append(hinge)
    return torch.stack(vals).mean(), torch.stack(hinges).mean()


def loss_attn(taps_adv: list[AttentionTap], taps_src: list[AttentionTap]) -> torch.Tensor:
    if [t.layer_id for t in taps_adv] != [t.layer_id for t in taps_src]:
        raise ValueError("attention tap layers differ between adversarial and source")
    total = torch.zeros((), dtype=DTYPE)
    for a, s in zip(taps_adv, taps_src):
        total = total + frob(a.K - s.K) + frob(a.V - s.V)
    return total


def loss_feat(feats_adv: list[FeatureTap], feats_src: list[FeatureTap], masks: dict) -> torch.Tensor:
    """``masks`` maps layer id to ``{kind: (H_l, W_l) mask}``."""
    if [t.layer_id for t in feats_adv] != [t.layer_id for t in feats_src]:
        raise ValueError("feature tap layers differ between adversarial and source")
    total = torch.zeros((), dtype=DTYPE)
    for a, s in zip(feats_adv, feats_src):
        diff = a.fmap - s.fmap
        for kind, m in masks[a.layer_id].items():
            if tuple(m.shape) != tuple(diff.shape[:2]):
                raise ShapeError(f"{kind} mask {tuple(m.shape)} does not match layer "
                                 f"{a.layer_id!r} resolution {tuple(diff.shape[:2])}")
            total = total + frob(diff * m[..., None])
    return total


def loss_total(terms: dict, weights: LossWeights, enabled: dict | None = None):
    enabled = enabled or {}
    total = 0.0
    for name, w in zip(TERMS, weights.as_tuple()):
        if enabled.get(name, True):
            total = total + w * terms[name]
    return total


@dataclass
class LossReport:
    l_loc: float
    l_id: float
    l_attn: float
    l_feat: float
    l_total: float
    id_hinge: float
    enabled: dict = field(default_factory=dict)

    def row(self, iteration: int) -> dict:
        return {"iteration": iteration, "l_loc": self.l_loc, "l_id": self.l_id,
                "l_attn": self.l_attn, "l_feat": self.l_feat, "l_total": self.l_total}


@dataclass(frozen=True)
class NoiseSlot:
    timestep: int
    noisy_latent: torch.Tensor


def make_noise_schedule(bundle: VictimBundle, z0: torch.Tensor, n_slots: int, seed: int,
                        mode: str = "uniform", fixed_timestep: int | None = None):
    """Seeded noisy latents, one per iteration (``fixed`` mode reuses one draw)."""
    if mode not in ("uniform", "fixed"):
        raise ValueError(f"unknown timestep mode {mode!r}")
    T = bundle.backbone.timesteps
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(int(rng.integers(2**62)))
    draws = 1 if mode == "fixed" else max(n_slots, 1)
    slots = []
    for _ in range(draws):
        if mode == "fixed":
            t = T // 2 if fixed_timestep is None else int(fixed_timestep)
            if not 0 <= t < T:
                raise ValueError(f"fixed timestep {t} outside [0, {T})")
        else:
            t = int(rng.integers(T))
        noise = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
        slots.append(NoiseSlot(t, bundle.noisy_latent(z0, t, noise)))
    return slots


class AttackObjective:
    """Run-scoped objective with every source-side quantity frozen at construction."""

    def __init__(self, bundle: VictimBundle, x_src: torch.Tensor, *, weights=None,
                 margin: float = 0.6, tau_p: float = 0.5, epsilon: float = 12 / 255,
                 enabled: dict | None = None, cam_encoder: str | None = None,
                 n_slots: int = 1, seed: int = 0, timestep_mode: str = "uniform",
                 fixed_timestep: int | None = None, masks: MaskSet | None = None):
        self.bundle = bundle
        self.x_src = x_src.detach()
        self.weights = weights or LossWeights()
        self.margin = margin
        self.epsilon = epsilon
        self.masks = masks or build_mask_set(bundle, self.x_src, tau_p, cam_encoder)
        self.enabled = {name: True for name in TERMS}
        self.enabled.update(enabled or {})
        if not self.masks.loc_enabled:
            self.enabled["loc"] = False
        with torch.no_grad():
            self.z0 = bundle.encode_latent(self.x_src)
            self.reg_src = bundle.detect(self.x_src).reg_offsets
            self.emb_src = [bundle.embed(self.x_src, e).data for e in bundle.attack_encoders]
            black = torch.zeros_like(self.x_src)
            self.emb_null = [bundle.embed(black, e).data for e in bundle.attack_encoders]
            self.slots = make_noise_schedule(bundle, self.z0, n_slots, seed,
                                             timestep_mode, fixed_timestep)
            self.taps_src = [bundle.tap_generation(self.x_src, s.noisy_latent, s.timestep)
                             for s in self.slots]

    def terms(self, x_adv: torch.Tensor, slot: int = 0) -> dict:
        b = self.bundle
        i = min(slot, len(self.slots) - 1)
        s = self.slots[i]
        attn_src, feat_src = self.taps_src[i]
        reg_adv = b.detect(x_adv).reg_offsets
        emb_adv = [b.embed(x_adv, e).data for e in b.attack_encoders]
        attn_adv, feat_adv = b.tap_generation(x_adv, s.noisy_latent, s.timestep)
        l_id, hinge = loss_id(emb_adv, self.emb_src, self.emb_null, self.margin)
        return {
            "loc": loss_loc(reg_adv, self.reg_src, self.masks.anchor.data),
            "id": l_id,
            "attn": loss_attn(attn_adv, attn_src),
            "feat": loss_feat(feat_adv, feat_src, self.masks.per_layer),
            "id_hinge": hinge,
        }

    def total(self, terms: dict):
        return loss_total(terms, self.weights, self.enabled)

    def report(self, terms: dict) -> LossReport:
        f = {k: float(v) for k, v in terms.items()}
        return LossReport(f["loc"], f["id"], f["attn"], f["feat"], float(self.total(terms)),
                          f["id_hinge"], dict(self.enabled))

    def project(self, x: torch.Tensor) -> torch.Tensor:
        return project_linf(x, self.x_src, self.epsilon)

    def adversarial_image(self, z: torch.Tensor) -> torch.Tensor:
        """Decode and project; the projection passes gradients straight through."""
        x = self.bundle.decode_latent(z)
        return x + (self.project(x) - x).detach()

    def evaluate(self, z: torch.Tensor, slot: int = 0) -> LossReport:
        with torch.no_grad():
            return self.report(self.terms(self.adversarial_image(z), slot))


def grad_total(z_adv: torch.Tensor, objective: AttackObjective, slot: int = 0,
               term: str | None = None):
    """Reverse-mode gradient of the combined loss (or one raw term) w.r.t. the latent.

    Returns ``(gradient, LossReport)``; raises :class:`NonFiniteGradient`
    naming the offending term.
    """
    z = z_adv.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        terms = objective.terms(objective.adversarial_image(z), slot)
        target = terms[term] if term else objective.total(terms)
        if not torch.is_tensor(target) or not target.requires_grad:
            grad = torch.zeros_like(z)
        else:
            (grad,) = torch.autograd.grad(target, z, retain_graph=True)
        if not torch.isfinite(grad).all():
            raise NonFiniteGradient(term or _offending_term(terms, z, objective))
    return grad.detach(), objective.report({k: v.detach() for k, v in terms.items()})


def _offending_term(terms, z, objective):
    for name in TERMS:
        if not objective.enabled[name]:
            continue
        v = terms[name]
        if not math.isfinite(float(v.detach())):
            return name
        (g,) = torch.autograd.grad(v, z, retain_graph=True, allow_unused=True)
        if g is not None and not torch.isfinite(g).all():
            return name
    return "total"
