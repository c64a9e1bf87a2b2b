"""Perceptual-adaptive signed-gradient ascent in the codec's latent space.

Each iteration decodes the current latent, projects the image into the
L-infinity ball around the source, takes the sign of the loss gradient
w.r.t. the latent and steps by ``alpha`` scaled by a smooth perceptual map:
regions where the current image already looks distorted get weaker steps.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from .core import DTYPE, LossWeights, PerturbationBudget, SpatialMask, dequantize_u8, quantize_u8
from .losses import AttackObjective, LossReport, NonFiniteGradient, grad_total
from .saliency import downsample_mask
from .victims.base import VictimBundle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptiveConfig:
    enabled: bool = True
    q: float = 0.5
    gamma: float = 0.3
    sigma: float = 3.0
    on_projected: bool = True

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError("q must lie strictly between 0 and 1")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def perceptual_map_step(bundle: VictimBundle, x_i: torch.Tensor, x_src: torch.Tensor) -> torch.Tensor:
    """Per-pixel fidelity ``1 - d``, where ``d`` is the perceptual distance map."""
    with torch.no_grad():
        _, dmap = bundle.perceptual_map(x_i, x_src)
    return (1.0 - dmap).clamp(0.0, 1.0)


def _array(x) -> np.ndarray:
    if isinstance(x, SpatialMask):
        x = x.data
    if torch.is_tensor(x):
        return x.detach().cpu().numpy().astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def binarize_quantile(S, q: float) -> SpatialMask:
    """1 where ``S`` strictly exceeds its linearly interpolated ``q``-quantile."""
    if not 0 < q < 1:
        raise ValueError("q must lie strictly between 0 and 1")
    arr = _array(S)
    thr = np.quantile(arr, q, method="linear")
    m = (arr > thr).astype(np.float64)
    if not m.any():
        log.debug("perceptual map is constant; binary mask is empty")
    return SpatialMask(torch.from_numpy(m), "perceptual-binary")


def smooth_map(M, gamma: float, sigma: float) -> SpatialMask:
    """Gaussian-smoothed ``M + gamma (1 - M)``, bounded to [gamma, 1].

    Kernel truncated at 3 sigma, unit sum, reflected borders.
    """
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    m = _array(M)
    lifted = m + gamma * (1.0 - m)
    out = gaussian_filter(lifted, sigma=sigma, mode="reflect", truncate=3.0)
    # the kernel is a convex combination; clip only absorbs round-off
    return SpatialMask(torch.from_numpy(np.clip(out, gamma, 1.0)), "perceptual-smooth")


@dataclass
class RunState:
    z_adv: torch.Tensor
    iteration: int
    objective: AttackObjective
    seed: int = 0
    log_rows: list = field(default_factory=list)
    p_history: list | None = None


def modulation(state: RunState, adaptive: AdaptiveConfig):
    """Image-resolution ``P`` and its latent-resolution broadcastable form."""
    obj = state.objective
    with torch.no_grad():
        x = obj.bundle.decode_latent(state.z_adv)
        if adaptive.on_projected:
            x = obj.project(x)
    S = perceptual_map_step(obj.bundle, x, obj.x_src)
    P = smooth_map(binarize_quantile(S, adaptive.q), adaptive.gamma, adaptive.sigma)
    gh, gw, _ = state.z_adv.shape
    return P, downsample_mask(P, (gh, gw)).to(state.z_adv.dtype)[..., None]


def step(state: RunState, budget: PerturbationBudget, adaptive: AdaptiveConfig,
         alpha: float | None = None) -> RunState:
    """One signed-gradient update; ``alpha`` overrides the budget's step size."""
    alpha = budget.alpha if alpha is None else alpha
    grad, report = grad_total(state.z_adv, state.objective, slot=state.iteration)
    direction = torch.sign(grad)
    history = state.p_history
    if adaptive.enabled:
        P, p_lat = modulation(state, adaptive)
        z_next = state.z_adv + alpha * p_lat * direction
        if history is not None:
            history = history + [P.data]
    else:
        z_next = state.z_adv + alpha * direction
    return dataclasses.replace(
        state, z_adv=z_next.detach(), iteration=state.iteration + 1,
        log_rows=state.log_rows + [report.row(state.iteration)], p_history=history)


@dataclass
class ProtectResult:
    image: torch.Tensor
    image_u8: np.ndarray
    log_rows: list
    initial: LossReport
    final: LossReport
    linf_bytes: int
    iterations: int
    wall_time: float
    masks: object = None
    p_history: list | None = None

    def summary(self) -> dict:
        return {
            "linf_bytes": self.linf_bytes,
            "iterations": self.iterations,
            "l_total_initial": self.initial.l_total,
            "l_total_final": self.final.l_total,
            "loc_enabled": self.final.enabled.get("loc", True),
        }


def init_run(x_src: torch.Tensor, bundle: VictimBundle, budget: PerturbationBudget,
             weights: LossWeights | None = None, *, margin=0.6, tau_p=0.5, seed=0,
             enabled=None, cam_encoder=None, timestep_mode="uniform", fixed_timestep=None,
             keep_history=False) -> RunState:
    x_src = x_src.to(DTYPE)
    obj = AttackObjective(bundle, x_src, weights=weights, margin=margin, tau_p=tau_p,
                          epsilon=budget.epsilon, enabled=enabled, cam_encoder=cam_encoder,
                          n_slots=budget.iterations + 1, seed=seed,
                          timestep_mode=timestep_mode, fixed_timestep=fixed_timestep)
    return RunState(obj.z0.clone(), 0, obj, seed, [], [] if keep_history else None)


def finalize(state: RunState) -> torch.Tensor:
    """Quantized, projected decode of the current latent, as unit-interval values."""
    obj = state.objective
    with torch.no_grad():
        x = obj.project(obj.bundle.decode_latent(state.z_adv))
    return dequantize_u8(quantize_u8(x))


def protect(x_src: torch.Tensor, bundle: VictimBundle, budget: PerturbationBudget | None = None,
            weights: LossWeights | None = None, adaptive: AdaptiveConfig | None = None,
            **run_kw) -> ProtectResult:
    """Run the full attack and return the 8-bit protected image plus its log."""
    budget = budget or PerturbationBudget()
    adaptive = adaptive or AdaptiveConfig()
    t0 = time.perf_counter()
    state = init_run(x_src, bundle, budget, weights, **run_kw)
    initial = state.objective.evaluate(state.z_adv, 0)
    for _ in range(budget.iterations):
        try:
            state = step(state, budget, adaptive)
        except NonFiniteGradient as exc:
            log.error("run aborted at iteration %d: %s", state.iteration, exc)
            exc.partial = state
            raise
    final = state.objective.evaluate(state.z_adv, 0)
    out = finalize(state)
    linf = int(np.abs(quantize_u8(out).astype(np.int16)
                      - quantize_u8(state.objective.x_src).astype(np.int16)).max())
    return ProtectResult(out, quantize_u8(out), state.log_rows, initial, final, linf,
                         state.iteration, time.perf_counter() - t0,
                         state.objective.masks, state.p_history)
