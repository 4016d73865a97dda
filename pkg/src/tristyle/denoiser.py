"""Toy denoising U-Net with text conditioning and hookable self-attention.

The network is deliberately small (16x16 latents, two resolution levels)
but keeps the structural features the rest of the package manipulates:
named self-attention layers in the decoder half, cross-attention text
conditioning, and attention projections that low-rank adapters target.

Every self-attention layer routes its Q/K/V through an optional hook set
before the shared scaled-dot-product core, so capture is free of side
effects and pass-through hooks are bit-identical to no hooks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .attention import styled_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import InvalidInputError, NumericalFailureError
from .latent import LATENT, LatentTensor
from .schedule import NoiseSchedule, forward_diffuse
from .seeding import generator
from .text import MAX_TOKENS, TextEmbedding, VOCABULARY, encode_prompt


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int = 4
    base_channels: int = 48
    channel_mults: tuple[int, ...] = (1, 2)
    num_heads: int = 4
    attention_resolutions: tuple[int, ...] = (16, 8)
    text_dim: int = 64
    vocab_size: int = len(VOCABULARY)
    latent_size: int = 16

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        object.__setattr__(self, "attention_resolutions", tuple(self.attention_resolutions))
        if not self.decoder_attention_layers:
            raise InvalidInputError("config yields no decoder self-attention layers")

    def _level_resolutions(self) -> list[int]:
        return [self.latent_size // (2**i) for i in range(len(self.channel_mults))]

    @property
    def decoder_attention_layers(self) -> tuple[str, ...]:
        """Names of decoder self-attention layers in forward order."""
        names = []
        for j, res in enumerate(reversed(self._level_resolutions())):
            if res in self.attention_resolutions:
                names.append(f"up{j}.sattn")
        return tuple(names)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (batch, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float().unsqueeze(-1) * freqs
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class _ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_ch)
        self.norm2 = nn.GroupNorm(8, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb)).unsqueeze(-1).unsqueeze(-1)
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


def _adapted_linear(layer: nn.Linear, x: torch.Tensor, adapter, key: str) -> torch.Tensor:
    """Linear layer with an optional low-rank weight delta for ``key``."""
    if adapter is not None:
        delta = adapter.weight_delta(key)
        if delta is not None:
            return F.linear(x, layer.weight + delta, layer.bias)
    return layer(x)


class _SelfAttention(nn.Module):
    def __init__(self, name: str, channels: int, num_heads: int):
        super().__init__()
        self.name = name
        self.num_heads = num_heads
        self.norm = nn.GroupNorm(8, channels)
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(channels, channels)
        self.to_v = nn.Linear(channels, channels)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x, t_key, hooks, adapter):
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = _adapted_linear(self.to_q, tokens, adapter, f"{self.name}.to_q")
        k = _adapted_linear(self.to_k, tokens, adapter, f"{self.name}.to_k")
        v = _adapted_linear(self.to_v, tokens, adapter, f"{self.name}.to_v")
        if hooks is not None:
            q, k, v = hooks(self.name, t_key, q, k, v)
        out = styled_attention(q, k, v, num_heads=self.num_heads)
        out = _adapted_linear(self.to_out, out, adapter, f"{self.name}.to_out")
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class _CrossAttention(nn.Module):
    def __init__(self, name: str, channels: int, text_dim: int, num_heads: int):
        super().__init__()
        self.name = name
        self.num_heads = num_heads
        self.norm = nn.GroupNorm(8, channels)
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(text_dim, channels)
        self.to_v = nn.Linear(text_dim, channels)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x, cond, adapter):
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = _adapted_linear(self.to_q, tokens, adapter, f"{self.name}.to_q")
        k = _adapted_linear(self.to_k, cond, adapter, f"{self.name}.to_k")
        v = _adapted_linear(self.to_v, cond, adapter, f"{self.name}.to_v")
        out = styled_attention(q, k, v, num_heads=self.num_heads)
        out = _adapted_linear(self.to_out, out, adapter, f"{self.name}.to_out")
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class _AttnPair(nn.Module):
    """Self-attention followed by text cross-attention at one stage."""

    def __init__(self, stage: str, channels: int, cfg: DenoiserConfig):
        super().__init__()
        self.sattn = _SelfAttention(f"{stage}.sattn", channels, cfg.num_heads)
        self.xattn = _CrossAttention(f"{stage}.xattn", channels, cfg.text_dim, cfg.num_heads)

    def forward(self, x, cond, t_key, hooks, adapter):
        x = self.sattn(x, t_key, hooks, adapter)
        return self.xattn(x, cond, adapter)


class Denoiser(nn.Module):
    """epsilon-prediction U-Net: forward(x_t, t, cond) -> predicted noise."""

    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        c0 = config.base_channels
        tdim = 4 * c0
        self.temb = nn.Sequential(nn.Linear(c0, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.token_table = nn.Embedding(config.vocab_size, config.text_dim)
        self.conv_in = nn.Conv2d(config.in_channels, c0, 3, padding=1)

        chans = [c0 * m for m in config.channel_mults]
        res_per_level = config._level_resolutions()

        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        ch = c0
        for i, (ch_out, res) in enumerate(zip(chans, res_per_level)):
            self.down_blocks.append(_ResBlock(ch, ch_out, tdim))
            self.down_attn.append(
                _AttnPair(f"down{i}", ch_out, config)
                if res in config.attention_resolutions
                else None
            )
            ch = ch_out
            if i < len(chans) - 1:
                self.downsamples.append(nn.Conv2d(ch, ch, 4, stride=2, padding=1))

        self.mid_block1 = _ResBlock(ch, ch, tdim)
        self.mid_attn = _AttnPair("mid", ch, config)
        self.mid_block2 = _ResBlock(ch, ch, tdim)

        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for j, (ch_skip, res) in enumerate(zip(reversed(chans), reversed(res_per_level))):
            self.up_blocks.append(_ResBlock(ch + ch_skip, ch_skip, tdim))
            self.up_attn.append(
                _AttnPair(f"up{j}", ch_skip, config)
                if res in config.attention_resolutions
                else None
            )
            ch = ch_skip
            if j < len(chans) - 1:
                self.upsamples.append(nn.Conv2d(ch, ch, 3, padding=1))

        self.norm_out = nn.GroupNorm(8, ch)
        self.conv_out = nn.Conv2d(ch, config.in_channels, 3, padding=1)

    @property
    def decoder_attention_layers(self) -> tuple[str, ...]:
        return self.config.decoder_attention_layers

    def attention_projection_keys(self) -> dict[str, tuple[int, int]]:
        """(out_features, in_features) per adapter-targetable projection."""
        keys: dict[str, tuple[int, int]] = {}
        for module in self.modules():
            if isinstance(module, (_SelfAttention, _CrossAttention)):
                for proj in ("to_q", "to_k", "to_v", "to_out"):
                    lin = getattr(module, proj)
                    keys[f"{module.name}.{proj}"] = (lin.out_features, lin.in_features)
        return keys

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.token_table(ids)

    @torch.no_grad()
    def embed_prompt(self, prompt: str) -> TextEmbedding:
        vec = self.token_table(encode_prompt(prompt)).detach().clone()
        return TextEmbedding(vector=vec, source_prompt=prompt)

    def forward(self, x, t, cond, t_key: int = -1, hooks=None, adapter=None):
        """Predict noise for latents ``x`` at timesteps ``t``.

        ``cond`` is (batch, tokens, text_dim); ``t_key`` is the scalar
        timestep used as the hook cache key during inference passes.
        """
        if x.ndim != 4:
            raise InvalidInputError(f"latents must be 4-D, got shape {tuple(x.shape)}")
        temb = self.temb(timestep_embedding(t, self.config.base_channels))
        h = self.conv_in(x)

        skips = []
        for i, (block, attn) in enumerate(zip(self.down_blocks, self.down_attn)):
            h = block(h, temb)
            if attn is not None:
                h = attn(h, cond, t_key, hooks, adapter)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)

        h = self.mid_block1(h, temb)
        h = self.mid_attn(h, cond, t_key, hooks, adapter)
        h = self.mid_block2(h, temb)

        for j, (block, attn) in enumerate(zip(self.up_blocks, self.up_attn)):
            h = block(torch.cat([h, skips[-1 - j]], dim=1), temb)
            if attn is not None:
                h = attn(h, cond, t_key, hooks, adapter)
            if j < len(self.upsamples):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[j](h)

        return self.conv_out(F.silu(self.norm_out(h)))

    @torch.no_grad()
    def encoder_features(self, z: torch.Tensor, t: int = 1) -> list[torch.Tensor]:
        """Down-path activations on latents ``z``, for perceptual metrics."""
        self.eval()
        b = z.shape[0]
        t_vec = torch.full((b,), int(t), dtype=torch.long)
        temb = self.temb(timestep_embedding(t_vec, self.config.base_channels))
        cond = self.token_table(encode_prompt("")).unsqueeze(0).expand(b, -1, -1)
        h = self.conv_in(z)
        feats = []
        for i, (block, attn) in enumerate(zip(self.down_blocks, self.down_attn)):
            h = block(h, temb)
            if attn is not None:
                h = attn(h, cond, -1, None, None)
            feats.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        return feats

    @torch.no_grad()
    def predict_noise(
        self,
        x_t,
        t: int,
        cond: TextEmbedding,
        hooks=None,
        adapter=None,
        guidance_scale: float = 1.0,
    ) -> torch.Tensor:
        """Inference-time noise prediction at scalar timestep ``t``.

        With ``guidance_scale != 1`` the unconditional and conditional
        rows are batched into one call so hook cache keys stay unique.
        """
        x = x_t.data if isinstance(x_t, LatentTensor) else x_t
        self.eval()
        b = x.shape[0]
        cond_vec = cond.vector.unsqueeze(0).expand(b, -1, -1)
        if guidance_scale == 1.0:
            t_vec = torch.full((b,), int(t), dtype=torch.long)
            return self.forward(x, t_vec, cond_vec, t_key=int(t), hooks=hooks, adapter=adapter)
        uncond_vec = self.embed_prompt("").vector.unsqueeze(0).expand(b, -1, -1)
        xx = torch.cat([x, x], dim=0)
        cc = torch.cat([uncond_vec, cond_vec], dim=0)
        t_vec = torch.full((2 * b,), int(t), dtype=torch.long)
        eps = self.forward(xx, t_vec, cc, t_key=int(t), hooks=hooks, adapter=adapter)
        eps_u, eps_c = eps[:b], eps[b:]
        return eps_u + guidance_scale * (eps_c - eps_u)

    def save(self, path, extra_manifest: dict | None = None) -> None:
        cfg = asdict(self.config)
        cfg["channel_mults"] = list(cfg["channel_mults"])
        cfg["attention_resolutions"] = list(cfg["attention_resolutions"])
        manifest = {"kind": "denoiser", "config": cfg}
        manifest.update(extra_manifest or {})
        save_checkpoint(path, self.state_dict(), manifest)

    @classmethod
    def load(cls, path) -> "Denoiser":
        tensors, manifest = load_checkpoint(path)
        cfg = dict(manifest["config"])
        cfg["channel_mults"] = tuple(cfg["channel_mults"])
        cfg["attention_resolutions"] = tuple(cfg["attention_resolutions"])
        model = cls(DenoiserConfig(**cfg))
        model.load_state_dict(tensors)
        model.eval()
        return model


def train_denoiser(
    model: Denoiser,
    latents: torch.Tensor,
    cond_ids: torch.Tensor,
    schedule: NoiseSchedule,
    steps: int = 2000,
    batch_size: int = 16,
    lr: float = 2e-3,
    seed: int = 0,
    p_uncond: float = 0.1,
) -> list[float]:
    """Standard epsilon-prediction training; returns the loss trace.

    A fraction ``p_uncond`` of captions is replaced by the unconditional
    token so a guidance scale other than 1 stays meaningful.
    """
    if latents.ndim != 4 or latents.shape[0] == 0:
        raise InvalidInputError("latents must be a non-empty (N, C, H, W) tensor")
    if cond_ids.shape[0] != latents.shape[0]:
        raise InvalidInputError("cond_ids must align with latents")
    gen = generator(seed, "denoiser-train")
    uncond_ids = encode_prompt("")
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    trace: list[float] = []
    model.train()
    for step in range(steps):
        idx = torch.randint(0, latents.shape[0], (batch_size,), generator=gen)
        x0 = latents[idx]
        ids = cond_ids[idx].clone()
        drop = torch.rand(batch_size, generator=gen) < p_uncond
        ids[drop] = uncond_ids
        t = torch.randint(1, schedule.T + 1, (batch_size,), generator=gen)
        noise = torch.randn(x0.shape, generator=gen)
        x_t = forward_diffuse(schedule, x0, t, noise)
        pred = model(x_t, t, model.embed_tokens(ids))
        loss = F.mse_loss(pred, noise)
        if not torch.isfinite(loss):
            raise NumericalFailureError("denoiser loss diverged", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss.detach()))
    model.eval()
    return trace


def encode_dataset(autoencoder, images: torch.Tensor, batch: int = 32) -> torch.Tensor:
    """Encode a pixel dataset to latents in manageable batches."""
    outs = [autoencoder.encode(images[i : i + batch]).data for i in range(0, images.shape[0], batch)]
    return torch.cat(outs, dim=0)
