"""The 4-axis tensor type passed between autoencoder, sampler and pipelines."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidInputError

PIXEL = "pixel"
LATENT = "latent"


@dataclass(frozen=True)
class LatentTensor:
    """A (batch, channel, height, width) tensor tagged with its space.

    Entries must be finite; the tag distinguishes pixel-space images in
    [0, 1] from autoencoder latents.
    """

    data: torch.Tensor
    space_tag: str

    def __post_init__(self):
        if self.data.ndim != 4:
            raise InvalidInputError(
                f"expected (batch, channel, height, width), got shape {tuple(self.data.shape)}"
            )
        if self.space_tag not in (PIXEL, LATENT):
            raise InvalidInputError(f"space_tag must be '{PIXEL}' or '{LATENT}'")
        if not torch.isfinite(self.data).all():
            raise InvalidInputError("tensor contains non-finite entries")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def with_data(self, data: torch.Tensor) -> "LatentTensor":
        return LatentTensor(data=data, space_tag=self.space_tag)
