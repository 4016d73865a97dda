"""Deterministic DDIM sampling and inversion over the toy denoiser.

The eta=0 update is used in both directions.  Denoising from t to t_prev:

    x0_hat  = (x_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)
    x_prev  = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev) * eps

Inversion runs the same recurrence upward, evaluating the model at the
lower step of each pair.  Model-time is clamped to >= 1 because the
denoiser never trains at t=0; schedule coefficients stay exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import InvalidInputError
from .latent import LATENT, LatentTensor
from .schedule import NoiseSchedule
from .text import TextEmbedding


@dataclass(frozen=True)
class DdimTrajectory:
    """Step indices walked by one pass, with optionally retained latents."""

    steps: tuple[int, ...]
    direction: str  # "denoise" | "invert"
    latents: tuple[torch.Tensor, ...] | None = None

    def __post_init__(self):
        diffs = [b - a for a, b in zip(self.steps, self.steps[1:])]
        if self.direction == "denoise" and any(d >= 0 for d in diffs):
            raise InvalidInputError("denoise trajectory steps must strictly decrease")
        if self.direction == "invert" and any(d <= 0 for d in diffs):
            raise InvalidInputError("invert trajectory steps must strictly increase")
        if self.direction not in ("denoise", "invert"):
            raise InvalidInputError(f"unknown trajectory direction '{self.direction}'")
        if self.latents is not None:
            for z in self.latents:
                if not torch.isfinite(z).all():
                    raise InvalidInputError("retained trajectory latent is non-finite")


def _coeffs(schedule: NoiseSchedule, t: int, like: torch.Tensor):
    abar = schedule.alpha_bar(t).to(like.dtype)
    return abar.sqrt(), (1.0 - abar).sqrt()


def ddim_step(schedule: NoiseSchedule, x_t: torch.Tensor, t: int, t_prev: int, eps: torch.Tensor) -> torch.Tensor:
    """One deterministic update from step ``t`` down to ``t_prev``."""
    if t <= t_prev or t_prev < 0:
        raise InvalidInputError(f"require t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if eps.shape != x_t.shape:
        raise InvalidInputError("eps shape must match x_t")
    sa_t, sb_t = _coeffs(schedule, t, x_t)
    sa_p, sb_p = _coeffs(schedule, t_prev, x_t)
    x0_hat = (x_t - sb_t * eps) / sa_t
    return sa_p * x0_hat + sb_p * eps


def invert_step(schedule: NoiseSchedule, x_prev: torch.Tensor, t_prev: int, t: int, eps: torch.Tensor) -> torch.Tensor:
    """Algebraic inverse of :func:`ddim_step` with the same ``eps``."""
    if t <= t_prev or t_prev < 0:
        raise InvalidInputError(f"require t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if eps.shape != x_prev.shape:
        raise InvalidInputError("eps shape must match x_prev")
    sa_t, sb_t = _coeffs(schedule, t, x_prev)
    sa_p, sb_p = _coeffs(schedule, t_prev, x_prev)
    x0_hat = (x_prev - sb_p * eps) / sa_p
    return sa_t * x0_hat + sb_t * eps


def ddim_sample(
    model,
    schedule: NoiseSchedule,
    x_start,
    t_start: int,
    cond: TextEmbedding,
    hooks=None,
    adapter=None,
    num_steps: int = 50,
    guidance_scale: float = 1.0,
    retain_latents: bool = False,
) -> tuple[LatentTensor, DdimTrajectory]:
    """Denoise from ``t_start`` (a sub-schedule step) down to t=0."""
    steps = schedule.inference_steps(num_steps)
    if t_start not in steps:
        raise InvalidInputError(
            f"t_start={t_start} not in the {num_steps}-step inference sub-schedule"
        )
    x = (x_start.data if isinstance(x_start, LatentTensor) else x_start).clone()
    path = [s for s in reversed(steps) if s <= t_start]
    retained = [x.clone()] if retain_latents else None
    for t, t_prev in zip(path, path[1:]):
        eps = model.predict_noise(x, t, cond, hooks=hooks, adapter=adapter, guidance_scale=guidance_scale)
        x = ddim_step(schedule, x, t, t_prev, eps)
        if retain_latents:
            retained.append(x.clone())
    traj = DdimTrajectory(
        steps=tuple(path),
        direction="denoise",
        latents=tuple(retained) if retained else None,
    )
    return LatentTensor(data=x, space_tag=LATENT), traj


def ddim_invert(
    model,
    schedule: NoiseSchedule,
    x0,
    cond: TextEmbedding,
    adapter=None,
    num_steps: int = 50,
    retain_latents: bool = False,
) -> tuple[LatentTensor, DdimTrajectory]:
    """Map a clean latent to the noise that regenerates it (guidance 1)."""
    steps = schedule.inference_steps(num_steps)
    x = (x0.data if isinstance(x0, LatentTensor) else x0).clone()
    retained = [x.clone()] if retain_latents else None
    for t_prev, t in zip(steps, steps[1:]):
        eps = model.predict_noise(x, max(t_prev, 1), cond, adapter=adapter, guidance_scale=1.0)
        x = invert_step(schedule, x, t_prev, t, eps)
        if retain_latents:
            retained.append(x.clone())
    traj = DdimTrajectory(
        steps=tuple(steps),
        direction="invert",
        latents=tuple(retained) if retained else None,
    )
    return LatentTensor(data=x, space_tag=LATENT), traj


def save_trajectory(traj: DdimTrajectory, path) -> None:
    """Dump retained per-step latents as a compressed archive for debugging."""
    if traj.latents is None:
        raise InvalidInputError("trajectory was not run with retain_latents=True")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"step_{s:05d}": z.numpy() for s, z in zip(traj.steps, traj.latents)}
    np.savez_compressed(path, direction=np.array(traj.direction), **arrays)
