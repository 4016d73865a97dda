"""Diffusion noise schedule and the closed-form forward process.

The schedule owns the beta/alpha tables over ``T`` training steps, with the
convention that cumulative products are indexed ``0..T`` and the zeroth
entry is exactly 1, so step ``t=0`` is the identity:

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import InvalidInputError


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha tables defining the forward and reverse diffusion.

    ``betas`` holds beta_1..beta_T and must be non-decreasing in (0, 1).
    ``alpha_bars`` has length T+1 with ``alpha_bars[0] == 1`` and is
    strictly decreasing.
    """

    betas: torch.Tensor
    alphas: torch.Tensor = field(init=False)
    alpha_bars: torch.Tensor = field(init=False)

    def __post_init__(self):
        betas = torch.as_tensor(self.betas, dtype=torch.float64)
        if betas.ndim != 1 or betas.numel() == 0:
            raise InvalidInputError("betas must be a non-empty 1-D sequence")
        if not torch.all((betas > 0) & (betas < 1)):
            raise InvalidInputError("betas must lie strictly inside (0, 1)")
        if torch.any(betas[1:] < betas[:-1]):
            raise InvalidInputError("betas must be monotone non-decreasing")
        alphas = 1.0 - betas
        alpha_bars = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(alphas, dim=0)])
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        """Standard linear schedule; the package default is T=1000, 1e-4..2e-2."""
        if T < 1:
            raise InvalidInputError(f"T must be positive, got {T}")
        return cls(betas=torch.linspace(beta_start, beta_end, T, dtype=torch.float64))

    @property
    def T(self) -> int:
        return int(self.betas.numel())

    def alpha_bar(self, t) -> torch.Tensor:
        """abar_t for integer or integer-tensor ``t`` in ``0..T``."""
        t = torch.as_tensor(t, dtype=torch.long)
        if torch.any(t < 0) or torch.any(t > self.T):
            raise InvalidInputError(f"t must lie in [0, {self.T}]")
        return self.alpha_bars[t]

    def inference_steps(self, num_steps: int) -> list[int]:
        """Uniform-stride DDIM sub-schedule ``[0, T/S, 2T/S, ..., T]``.

        Returned ascending; samplers walk it downward, inversion upward.
        """
        if num_steps < 1 or num_steps > self.T:
            raise InvalidInputError(f"num_steps must be in [1, {self.T}]")
        if self.T % num_steps != 0:
            raise InvalidInputError(
                f"num_steps {num_steps} must divide T={self.T} for a uniform stride"
            )
        stride = self.T // num_steps
        return list(range(0, self.T + 1, stride))


def _match(coef: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Broadcast a per-sample scalar coefficient over trailing axes of ``like``."""
    coef = coef.to(like.dtype)
    while coef.ndim < like.ndim:
        coef = coef.unsqueeze(-1)
    return coef


def forward_diffuse(schedule: NoiseSchedule, x0: torch.Tensor, t, noise: torch.Tensor) -> torch.Tensor:
    """Closed-form forward noising of ``x0`` to step ``t``.

    ``t`` may be a scalar or a per-sample integer tensor; ``noise`` must
    match ``x0`` in shape.  ``t=0`` returns ``x0`` exactly.
    """
    if noise.shape != x0.shape:
        raise InvalidInputError(
            f"noise shape {tuple(noise.shape)} must match x0 shape {tuple(x0.shape)}"
        )
    abar = schedule.alpha_bar(t)
    return _match(abar.sqrt(), x0) * x0 + _match((1.0 - abar).sqrt(), x0) * noise
