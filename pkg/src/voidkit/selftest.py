"""Built-in invariant checks run by ``voidkit selftest``."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from .core import PerturbationBudget, quantize_u8
from .losses import TERMS, AttackObjective, grad_total
from .optimizer import AdaptiveConfig, binarize_quantile, protect, smooth_map
from .victims import build_surrogate_bundle, synthetic_face
from .victims.base import VictimBundle

log = logging.getLogger(__name__)

FD_STEP = 1e-4
FD_COORDS = 20
FD_TOL = 1e-2


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


def fd_relative_errors(objective: AttackObjective, z: torch.Tensor, term: str | None,
                       coords: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Per-coordinate ``|g_ad - g_fd| / max(|g_ad|, |g_fd|)`` with central differences."""
    grad, _ = grad_total(z, objective, slot=0, term=term)

    def value(zz):
        with torch.no_grad():
            terms = objective.terms(objective.adversarial_image(zz), 0)
            return float(terms[term] if term else objective.total(terms))

    flat = z.reshape(-1)
    errs = []
    for k in coords:
        e = torch.zeros_like(flat)
        e[k] = h
        fd = (value((flat + e).reshape(z.shape)) - value((flat - e).reshape(z.shape))) / (2 * h)
        ad = float(grad.reshape(-1)[k])
        scale = max(abs(ad), abs(fd))
        errs.append(0.0 if scale == 0 else abs(ad - fd) / scale)
    return np.array(errs)


def gradient_checks(bundle: VictimBundle, x: torch.Tensor, seed: int = 0) -> list[Check]:
    # a unit radius leaves the projection inactive so the straight-through
    # backward pass equals the derivative of the forward pass
    obj = AttackObjective(bundle, x, epsilon=1.0, seed=seed)
    rng = np.random.default_rng(seed)
    z = obj.z0 + 0.01 * torch.from_numpy(rng.standard_normal(tuple(obj.z0.shape)))
    coords = rng.choice(z.numel(), size=FD_COORDS, replace=False)
    checks = []
    for term in list(TERMS) + [None]:
        errs = fd_relative_errors(obj, z, term, coords)
        name = f"grad_{term or 'total'}"
        checks.append(Check(name, bool(errs.max() < FD_TOL), f"max_rel_err={errs.max():.2e}"))
    return checks


def identity_checks(bundle: VictimBundle, x: torch.Tensor, margin: float = 0.6) -> list[Check]:
    obj = AttackObjective(bundle, x, margin=margin)
    with torch.no_grad():
        t = {k: float(v) for k, v in obj.terms(obj.x_src, 0).items()}
    tol = 1e-9
    return [
        Check("identity_loc", abs(t["loc"] - 1) <= tol, f"L_loc={t['loc']!r}"),
        Check("identity_attn", abs(t["attn"]) <= tol, f"L_attn={t['attn']!r}"),
        Check("identity_feat", abs(t["feat"]) <= tol, f"L_feat={t['feat']!r}"),
        Check("identity_hinge", abs(t["id_hinge"] - margin) <= tol, f"hinge={t['id_hinge']!r}"),
    ]


def mask_checks(bundle: VictimBundle, x: torch.Tensor, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    cfg = AdaptiveConfig()
    S = rng.random((64, 64))
    M = binarize_quantile(S, cfg.q).data
    frac = float(M.mean())
    P = smooth_map(M, cfg.gamma, cfg.sigma).data
    obj = AttackObjective(bundle, x)
    masks = obj.masks
    sem_frac = float(masks.semantic.data.mean())
    cam = masks.cam.data
    return [
        Check("quantile_fraction", abs(frac - (1 - cfg.q)) <= 2 / S.size, f"ones={frac:.4f}"),
        Check("smooth_bounds", bool(P.min() >= cfg.gamma and P.max() <= 1), f"P in [{float(P.min()):.3f}, {float(P.max()):.3f}]"),
        Check("anchor_mask_nonempty", masks.loc_enabled, f"anchors={int(masks.anchor.data.sum())}"),
        Check("semantic_area", 0.02 <= sem_frac <= 0.40, f"area={sem_frac:.3f}"),
        Check("cam_range", bool(cam.min() >= 0 and cam.max() <= 1), f"max={float(cam.max()):.3f}"),
    ]


def budget_checks(bundle: VictimBundle, x: torch.Tensor, seed: int = 0) -> list[Check]:
    budget = PerturbationBudget(iterations=3)
    res = protect(x, bundle, budget, seed=seed)
    diff = np.abs(quantize_u8(res.image).astype(int) - quantize_u8(x).astype(int)).max()
    return [Check("budget_linf", int(diff) <= budget.epsilon_bytes, f"max_byte_dev={int(diff)}")]


def run_selftest(bundle: VictimBundle | None = None, seed: int = 0) -> list[Check]:
    t0 = time.perf_counter()
    bundle = bundle or build_surrogate_bundle()
    x = synthetic_face(seed)
    checks = []
    checks += gradient_checks(bundle, x, seed)
    checks += identity_checks(bundle, x)
    checks += mask_checks(bundle, x, seed)
    checks += budget_checks(bundle, x, seed)
    log.info("selftest finished in %.1fs", time.perf_counter() - t0)
    return checks
