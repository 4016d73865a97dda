"""Toy convolutional autoencoder standing in for the frozen VAE.

Downsample factor is fixed at 4: 64x64 RGB pixels map to a
``latent_channels`` x 16 x 16 latent.  The model is trained once per
dataset with plain MSE reconstruction, a global latent scale is fitted so
latents have roughly unit standard deviation, and the weights are frozen
for everything downstream.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import InvalidInputError, NumericalFailureError
from .latent import LATENT, PIXEL, LatentTensor
from .seeding import generator

DOWNSAMPLE_FACTOR = 4


@dataclass(frozen=True)
class AutoencoderConfig:
    in_channels: int = 3
    base_channels: int = 32
    latent_channels: int = 4
    image_size: int = 64

    @property
    def latent_size(self) -> int:
        return self.image_size // DOWNSAMPLE_FACTOR


class ImageAutoencoder(nn.Module):
    def __init__(self, config: AutoencoderConfig = AutoencoderConfig()):
        super().__init__()
        self.config = config
        c = config.base_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(config.in_channels, c, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(c, c, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * c, config.latent_channels, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(config.latent_channels, 2 * c, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(c, c, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(c, config.in_channels, 3, padding=1),
            nn.Sigmoid(),
        )
        # Fitted after training so downstream latents have std ~= 1.
        self.register_buffer("latent_scale", torch.ones(()))

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.config.latent_channels, self.config.latent_size, self.config.latent_size)

    def _check_pixel_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise InvalidInputError(
                f"expected (batch, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        if x.shape[2] % DOWNSAMPLE_FACTOR or x.shape[3] % DOWNSAMPLE_FACTOR:
            raise InvalidInputError(
                f"spatial size {tuple(x.shape[2:])} must be divisible by {DOWNSAMPLE_FACTOR}"
            )
        if x.min() < -1e-6 or x.max() > 1 + 1e-6:
            raise InvalidInputError("pixel values must lie in [0, 1]")

    @torch.no_grad()
    def encode(self, image) -> LatentTensor:
        """Map pixel-space images in [0, 1] to scaled latents."""
        x = image.data if isinstance(image, LatentTensor) else image
        self._check_pixel_input(x)
        self.eval()
        z = self.encoder(x) * self.latent_scale
        return LatentTensor(data=z, space_tag=LATENT)

    @torch.no_grad()
    def decode(self, latent) -> LatentTensor:
        """Map latents back to pixel space, clamped to [0, 1] by the sigmoid head."""
        z = latent.data if isinstance(latent, LatentTensor) else latent
        if z.ndim != 4 or z.shape[1:] != self.latent_shape:
            raise InvalidInputError(
                f"latent shape {tuple(z.shape)} does not match declared {self.latent_shape}"
            )
        self.eval()
        x = self.decoder(z / self.latent_scale)
        return LatentTensor(data=x, space_tag=PIXEL)

    def save(self, path, extra_manifest: dict | None = None) -> None:
        manifest = {"kind": "autoencoder", "config": asdict(self.config)}
        manifest.update(extra_manifest or {})
        save_checkpoint(path, self.state_dict(), manifest)

    @classmethod
    def load(cls, path) -> "ImageAutoencoder":
        tensors, manifest = load_checkpoint(path)
        model = cls(AutoencoderConfig(**manifest["config"]))
        model.load_state_dict(tensors)
        model.eval()
        return model


def train_autoencoder(
    images: torch.Tensor,
    config: AutoencoderConfig = AutoencoderConfig(),
    steps: int = 600,
    batch_size: int = 16,
    lr: float = 2e-3,
    seed: int = 0,
) -> tuple[ImageAutoencoder, list[float], float]:
    """Train on ``images`` (N, C, H, W) in [0, 1]; returns (model, loss trace, eps_rec).

    ``eps_rec`` is the per-pixel reconstruction MAE on a held-out tenth of
    the dataset, the tolerance recorded in run manifests.
    """
    if images.ndim != 4 or images.shape[0] == 0:
        raise InvalidInputError("images must be a non-empty (N, C, H, W) tensor")
    torch.manual_seed(seed)
    model = ImageAutoencoder(config)
    n_holdout = max(1, images.shape[0] // 10) if images.shape[0] > 1 else 0
    train_images = images[: images.shape[0] - n_holdout]
    holdout = images[images.shape[0] - n_holdout :]
    if train_images.shape[0] == 0:
        train_images = images

    opt = torch.optim.Adam(model.parameters(), lr=lr)
    gen = generator(seed, "ae-batches")
    trace: list[float] = []
    model.train()
    for step in range(steps):
        idx = torch.randint(0, train_images.shape[0], (batch_size,), generator=gen)
        batch = train_images[idx]
        recon = model.decoder(model.encoder(batch))
        loss = nn.functional.mse_loss(recon, batch)
        if not torch.isfinite(loss):
            raise NumericalFailureError("autoencoder loss diverged", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss.detach()))

    model.eval()
    with torch.no_grad():
        z = model.encoder(train_images)
        std = z.std()
        model.latent_scale.fill_(1.0 / float(std) if float(std) > 0 else 1.0)
        ref = holdout if n_holdout else train_images
        recon = model.decode(model.encode(ref)).data
        eps_rec = float((recon - ref).abs().mean())
    for p in model.parameters():
        p.requires_grad_(False)
    return model, trace, eps_rec
