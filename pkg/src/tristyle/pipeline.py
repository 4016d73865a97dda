"""The training-free triple diffusion process.

Three weight-sharing denoising passes over one content image:

  style pass      noise to t_large, denoise with the style adapter,
                  capturing self-attention K/V per (layer, t)
  inversion pass  DDIM-invert to T, denoise without the adapter,
                  capturing Q per (layer, t)
  main pass       noise to t_small (< t_large), denoise with the adapter
                  while fusing captured Q and swapping in captured K/V

All passes share one inference sub-schedule so cache keys align exactly.
Disabling both injection flags with a zero adapter reduces the whole
pipeline to vanilla DDIM img2img, bit-identically at equal seeds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import torch

from .attention import AttentionCache, CaptureHooks, InjectionPolicy, install
from .autoencoder import ImageAutoencoder
from .ddim import ddim_invert, ddim_sample
from .denoiser import Denoiser
from .errors import InvalidInputError, StateError
from .latent import LatentTensor, PIXEL
from .lora import LoraAdapter
from .schedule import NoiseSchedule, forward_diffuse
from .seeding import generator
from .text import COLOR_WORDS, tokenize


@dataclass
class DiffusionStack:
    """The frozen models a pipeline invocation runs over."""

    autoencoder: ImageAutoencoder
    denoiser: Denoiser
    schedule: NoiseSchedule
    adapter: LoraAdapter | None = None


@dataclass(frozen=True)
class PipelineConfig:
    """Thresholds, prompts and injection settings for one invocation.

    ``t_small``/``t_large`` are training-schedule steps on the inference
    grid with 0 < t_small < t_large <= T.  ``prompt`` conditions the
    style pass; ``main_prompt`` overrides the main pass's default
    conditioning (the stripped content caption).
    """

    t_small: int
    t_large: int
    beta: float = 0.6
    prompt: str | None = None
    main_prompt: str | None = None
    lora_id: str | None = None
    seed: int = 0
    num_steps: int = 50
    guidance_scale: float = 1.0
    policy: InjectionPolicy | None = None

    @classmethod
    def from_fractions(cls, schedule: NoiseSchedule, small_frac: float = 0.3,
                       large_frac: float = 0.6, num_steps: int = 50, **kwargs) -> "PipelineConfig":
        """Thresholds as fractions of the inference schedule, snapped to the grid."""
        steps = schedule.inference_steps(num_steps)
        stride = steps[1] - steps[0]
        snap = lambda f: max(stride, round(f * schedule.T / stride) * stride)
        return cls(t_small=snap(small_frac), t_large=snap(large_frac), num_steps=num_steps, **kwargs)

    def validate(self, schedule: NoiseSchedule) -> None:
        if not 0 < self.t_small < self.t_large <= schedule.T:
            raise InvalidInputError(
                f"thresholds must satisfy 0 < t_small < t_large <= T, "
                f"got t_small={self.t_small}, t_large={self.t_large}, T={schedule.T}"
            )
        grid = set(schedule.inference_steps(self.num_steps))
        for name, t in (("t_small", self.t_small), ("t_large", self.t_large)):
            if t not in grid:
                raise InvalidInputError(
                    f"{name}={t} is not on the {self.num_steps}-step inference grid"
                )

    def build_policy(self, decoder_layers: tuple[str, ...]) -> InjectionPolicy:
        if self.policy is not None:
            return self.policy
        return InjectionPolicy(target_layers=decoder_layers, beta=self.beta)


@dataclass
class TransferResult:
    """Decoded output plus enough metadata to reproduce the run."""

    output: LatentTensor
    config: PipelineConfig
    passes: dict[str, tuple[int, ...]] = field(default_factory=dict)
    timing_s: float = 0.0


def _as_pixel_batch(image) -> torch.Tensor:
    x = image.data if isinstance(image, LatentTensor) else image
    if x.ndim == 3:
        x = x.unsqueeze(0)
    return x


def ddim_img2img(
    stack: DiffusionStack,
    image,
    t_start: int,
    prompt: str,
    seed: int = 0,
    num_steps: int = 50,
    guidance_scale: float = 1.0,
    adapter: LoraAdapter | None = None,
) -> LatentTensor:
    """Vanilla img2img baseline: noise to ``t_start``, denoise, decode.

    Draws its starting noise from the same derived stream as the triple
    pipeline's main pass, so it is the exact reduction target.
    """
    x = _as_pixel_batch(image)
    f0 = stack.autoencoder.encode(x).data
    noise = torch.randn(f0.shape, generator=generator(seed, "noise/main"))
    x_t = forward_diffuse(stack.schedule, f0, t_start, noise)
    cond = stack.denoiser.embed_prompt(prompt)
    z, _ = ddim_sample(
        stack.denoiser, stack.schedule, x_t, t_start, cond,
        adapter=adapter, num_steps=num_steps, guidance_scale=guidance_scale,
    )
    return stack.autoencoder.decode(z)


def _triple_run(
    stack: DiffusionStack,
    content,
    config: PipelineConfig,
    content_caption: str,
    style_prompt: str | None,
) -> TransferResult:
    if stack.adapter is None:
        raise StateError("style adapter missing: fine-tune or load LoRA weights first")
    config.validate(stack.schedule)
    denoiser, schedule = stack.denoiser, stack.schedule
    policy = config.build_policy(denoiser.decoder_attention_layers)
    started = time.perf_counter()

    x = _as_pixel_batch(content)
    f0 = stack.autoencoder.encode(x).data
    main_cond = denoiser.embed_prompt(
        config.main_prompt if config.main_prompt is not None else content_caption
    )
    style_cond = denoiser.embed_prompt(
        style_prompt if style_prompt is not None else content_caption
    )
    inv_cond = denoiser.embed_prompt(content_caption)

    passes: dict[str, tuple[int, ...]] = {}
    style_cache = inversion_cache = None

    if policy.swap_kv:
        noise_l = torch.randn(f0.shape, generator=generator(config.seed, "noise/style"))
        f_l = forward_diffuse(schedule, f0, config.t_large, noise_l)
        style_cache = AttentionCache("style")
        _, traj = ddim_sample(
            denoiser, schedule, f_l, config.t_large, style_cond,
            hooks=CaptureHooks(style_cache, policy.target_layers),
            adapter=stack.adapter, num_steps=config.num_steps,
            guidance_scale=config.guidance_scale,
        )
        passes["style"] = traj.steps

    if policy.fuse_query:
        # The whole inversion side runs without the adapter: an adapted
        # capture pass denoises F_i into a styled image, and its queries
        # then stop anchoring content (measured to flip the
        # query-preservation effect on 2 of 3 trained toy models).
        f_i, inv_traj = ddim_invert(
            denoiser, schedule, f0, inv_cond, adapter=None, num_steps=config.num_steps
        )
        passes["invert"] = inv_traj.steps
        inversion_cache = AttentionCache("inversion")
        _, traj = ddim_sample(
            denoiser, schedule, f_i.data, schedule.T, inv_cond,
            hooks=CaptureHooks(inversion_cache, policy.target_layers),
            adapter=None, num_steps=config.num_steps,
            guidance_scale=config.guidance_scale,
        )
        passes["inversion"] = traj.steps

    noise_s = torch.randn(f0.shape, generator=generator(config.seed, "noise/main"))
    f_s = forward_diffuse(schedule, f0, config.t_small, noise_s)
    hooks = install(
        policy,
        {"style": style_cache, "inversion": inversion_cache},
        decoder_layers=denoiser.decoder_attention_layers,
    )
    z, traj = ddim_sample(
        denoiser, schedule, f_s, config.t_small, main_cond,
        hooks=hooks, adapter=stack.adapter, num_steps=config.num_steps,
        guidance_scale=config.guidance_scale,
    )
    passes["main"] = traj.steps
    output = stack.autoencoder.decode(z)
    return TransferResult(
        output=output, config=config, passes=passes,
        timing_s=time.perf_counter() - started,
    )


def image_style_transfer(
    stack: DiffusionStack, content, config: PipelineConfig, content_caption: str = ""
) -> TransferResult:
    """Image-driven style transfer: all passes conditioned on the content caption."""
    return _triple_run(stack, content, config, content_caption, style_prompt=config.prompt)


def text_stylization(
    stack: DiffusionStack, content, prompt: str, config: PipelineConfig,
    content_caption: str = "",
) -> TransferResult:
    """Triple process with the style pass conditioned on ``prompt``."""
    return _triple_run(stack, content, config, content_caption, style_prompt=prompt)


def color_edit(
    stack: DiffusionStack, content, color_prompt: str, config: PipelineConfig,
    content_caption: str = "",
) -> TransferResult:
    """Stylization whose prompt names at least one vocabulary color word."""
    words = tokenize(color_prompt)
    if not any(w in COLOR_WORDS for w in words):
        raise InvalidInputError(
            f"color prompt must contain a color word ({', '.join(COLOR_WORDS)})"
        )
    return text_stylization(stack, content, color_prompt, config, content_caption)


def channel_shares(images: torch.Tensor) -> torch.Tensor:
    """Per-image RGB share (each channel's fraction of total intensity)."""
    x = _as_pixel_batch(images)
    sums = x.sum(dim=(2, 3))
    return sums / sums.sum(dim=1, keepdim=True).clamp_min(1e-8)


@dataclass
class SweepRow:
    t_small: int
    t_large: int
    content_distance: float
    style_distance: float


@dataclass
class SweepReport:
    rows: list[SweepRow]
    outputs: list[torch.Tensor]  # one (B, 3, H, W) tensor per grid point

    def to_csv(self, path) -> None:
        import csv
        from pathlib import Path

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_small", "t_large", "content_distance", "style_distance"])
            for row in self.rows:
                writer.writerow([row.t_small, row.t_large,
                                 f"{row.content_distance:.6f}", f"{row.style_distance:.6f}"])

    def save_grid(self, path, max_cols: int = 8) -> None:
        """Montage PNG: one row per grid point."""
        import numpy as np
        from PIL import Image
        from pathlib import Path

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = min(max_cols, self.outputs[0].shape[0])
        h, w = self.outputs[0].shape[-2:]
        canvas = np.zeros((len(self.outputs) * h, cols * w, 3), dtype=np.uint8)
        for r, batch in enumerate(self.outputs):
            for c in range(cols):
                img = (batch[c].clamp(0, 1).permute(1, 2, 0).numpy() * 255).astype(np.uint8)
                canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = img
        Image.fromarray(canvas).save(path)


def threshold_sweep(
    stack: DiffusionStack,
    content,
    grid: list[tuple[int, int]],
    base_config: PipelineConfig,
    content_caption: str = "",
    perceptual=None,
    embedder=None,
    style_images: torch.Tensor | None = None,
) -> SweepReport:
    """Run the pipeline over a threshold grid and tabulate both distances.

    ``perceptual`` scores content preservation (mean distance of outputs
    to their content inputs); ``embedder`` plus ``style_images`` score
    stylization (mean embedding distance to the style set centroid).
    Either score falls back to NaN when its dependency is not supplied.
    """
    import numpy as np

    x = _as_pixel_batch(content)
    rows, outputs = [], []
    style_centroid = None
    if embedder is not None and style_images is not None:
        style_centroid = np.asarray(embedder.embed_images(style_images)).mean(axis=0)
    for t_small, t_large in grid:
        cfg = replace(base_config, t_small=t_small, t_large=t_large)
        cfg.validate(stack.schedule)
        result = image_style_transfer(stack, x, cfg, content_caption)
        out = result.output.data
        outputs.append(out)
        content_d = float("nan")
        if perceptual is not None:
            content_d = float(np.mean([perceptual(out[i : i + 1], x[i : i + 1]) for i in range(x.shape[0])]))
        style_d = float("nan")
        if style_centroid is not None:
            emb = np.asarray(embedder.embed_images(out))
            style_d = float(np.linalg.norm(emb - style_centroid, axis=1).mean())
        rows.append(SweepRow(t_small=t_small, t_large=t_large,
                             content_distance=content_d, style_distance=style_d))
    return SweepReport(rows=rows, outputs=outputs)
