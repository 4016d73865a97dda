"""Low-rank adapters on the denoiser's attention projections, plus the
three-stage fine-tuning loop they are trained with.

An adapter stores per-layer factors (A: r x d_in, B: d_out x r) with B
zero-initialized, so a fresh adapter is an exact identity.  Stage datasets
grow 1 -> 1+q -> 1+2q through human-curated candidates and must nest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn
from torch.nn import functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import InvalidInputError, NumericalFailureError
from .schedule import NoiseSchedule, forward_diffuse
from .seeding import derive_seed, generator
from .text import encode_prompt


@dataclass(frozen=True)
class StageDataset:
    """Images plus stripped captions for one fine-tuning stage.

    Sizes are pinned to 1 + (stage - 1) * quota; stage N must contain
    stage N-1 as a prefix.
    """

    stage: int
    image_paths: tuple[str, ...]
    captions: tuple[str, ...]
    quota: int = 50

    def __post_init__(self):
        object.__setattr__(self, "image_paths", tuple(str(p) for p in self.image_paths))
        object.__setattr__(self, "captions", tuple(self.captions))
        if self.stage not in (1, 2, 3):
            raise InvalidInputError(f"stage must be 1, 2 or 3, got {self.stage}")
        if len(self.image_paths) != self.expected_size:
            raise InvalidInputError(
                f"stage {self.stage} dataset must have exactly {self.expected_size} "
                f"images, got {len(self.image_paths)}"
            )
        if len(self.captions) != len(self.image_paths):
            raise InvalidInputError("captions must align one-to-one with images")

    @property
    def expected_size(self) -> int:
        return 1 + (self.stage - 1) * self.quota

    def nests(self, previous: "StageDataset") -> bool:
        return (
            previous.stage == self.stage - 1
            and self.image_paths[: len(previous.image_paths)] == previous.image_paths
        )

    def to_manifest(self) -> dict:
        return {
            "stage": self.stage,
            "quota": self.quota,
            "images": list(self.image_paths),
            "captions": list(self.captions),
        }

    @classmethod
    def from_manifest(cls, raw: dict) -> "StageDataset":
        return cls(
            stage=raw["stage"],
            image_paths=tuple(raw["images"]),
            captions=tuple(raw["captions"]),
            quota=raw["quota"],
        )

    def content_hash(self) -> str:
        payload = json.dumps(self.to_manifest(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


class LoraAdapter(nn.Module):
    """Per-layer (A, B) deltas; ``weight_delta(key)`` is s * B @ A.

    In eval mode an all-zero B yields ``None`` so base weights are used
    bit-identically; in train mode the delta always participates so B
    receives gradients.
    """

    def __init__(self, shapes: dict[str, tuple[int, int]], rank: int = 8, scale: float = 1.0, seed: int = 0):
        super().__init__()
        if rank < 1:
            raise InvalidInputError(f"rank must be >= 1, got {rank}")
        self.rank = rank
        self.scale = scale
        self.target_keys = tuple(sorted(shapes))
        self.manifest: dict = {"stages": [], "seed": seed}
        gen = generator(seed, "lora-init")
        self._a = nn.ParameterDict()
        self._b = nn.ParameterDict()
        for key, (d_out, d_in) in shapes.items():
            slot = self._slot(key)
            self._a[slot] = nn.Parameter(torch.randn(rank, d_in, generator=gen) * 0.02)
            self._b[slot] = nn.Parameter(torch.zeros(d_out, rank))

    @staticmethod
    def _slot(key: str) -> str:
        return key.replace(".", "__")

    def weight_delta(self, key: str) -> torch.Tensor | None:
        slot = self._slot(key)
        if slot not in self._a:
            return None
        b = self._b[slot]
        if not self.training and (self.scale == 0.0 or not torch.any(b != 0)):
            return None
        return self.scale * (b @ self._a[slot])

    def factors(self, key: str) -> tuple[torch.Tensor, torch.Tensor]:
        slot = self._slot(key)
        if slot not in self._a:
            raise InvalidInputError(f"adapter does not target layer '{key}'")
        return self._a[slot], self._b[slot]

    def save(self, path) -> None:
        shapes = {k: tuple(self._b[self._slot(k)].shape[:1]) + tuple(self._a[self._slot(k)].shape[1:]) for k in self.target_keys}
        manifest = {
            "kind": "lora",
            "rank": self.rank,
            "scale": self.scale,
            "shapes": {k: list(v) for k, v in shapes.items()},
            "training": self.manifest,
        }
        save_checkpoint(path, self.state_dict(), manifest)

    @classmethod
    def load(cls, path) -> "LoraAdapter":
        tensors, manifest = load_checkpoint(path)
        shapes = {k: tuple(v) for k, v in manifest["shapes"].items()}
        adapter = cls(shapes, rank=manifest["rank"], scale=manifest["scale"])
        adapter.load_state_dict(tensors)
        adapter.manifest = manifest.get("training", {})
        adapter.eval()
        return adapter

    @classmethod
    def for_denoiser(cls, denoiser, rank: int = 8, scale: float = 1.0, seed: int = 0) -> "LoraAdapter":
        adapter = cls(denoiser.attention_projection_keys(), rank=rank, scale=scale, seed=seed)
        adapter.eval()
        return adapter


def apply_adapter(W: torch.Tensor, adapter: LoraAdapter, layer: str) -> torch.Tensor:
    """Effective weight W + s * B @ A for ``layer``; W itself is untouched."""
    a, b = adapter.factors(layer)
    if W.shape != (b.shape[0], a.shape[1]):
        raise InvalidInputError(
            f"weight shape {tuple(W.shape)} does not match adapter factors for '{layer}'"
        )
    if not torch.any(b != 0) or adapter.scale == 0.0:
        return W.clone()
    return W + adapter.scale * (b @ a)


def _state_checksum(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


def finetune_stage(
    denoiser,
    autoencoder,
    adapter: LoraAdapter,
    dataset: StageDataset,
    schedule: NoiseSchedule,
    steps: int = 1000,
    batch_size: int = 4,
    lr: float = 1e-3,
    seed: int = 0,
    images: torch.Tensor | None = None,
) -> list[float]:
    """Train adapter parameters only; base weights stay bit-identical.

    ``images`` may pre-supply decoded pixel tensors aligned with the
    dataset to skip PNG loading.  Returns the loss trace.
    """
    from .data import load_image  # local import: data module depends on nothing here

    if images is None:
        images = torch.stack([load_image(p) for p in dataset.image_paths])
    if images.shape[0] != len(dataset.image_paths):
        raise InvalidInputError("images must align with the stage dataset")

    base_sums = (_state_checksum(denoiser), _state_checksum(autoencoder))
    latents = autoencoder.encode(images).data
    cond_ids = torch.stack([encode_prompt(c) for c in dataset.captions])

    denoiser.eval()
    for p in denoiser.parameters():
        p.requires_grad_(False)
    adapter.train()
    opt = torch.optim.Adam(adapter.parameters(), lr=lr)
    gen = generator(seed, f"lora-stage{dataset.stage}")
    trace: list[float] = []
    for step in range(steps):
        idx = torch.randint(0, latents.shape[0], (batch_size,), generator=gen)
        x0 = latents[idx]
        t = torch.randint(1, schedule.T + 1, (batch_size,), generator=gen)
        noise = torch.randn(x0.shape, generator=gen)
        x_t = forward_diffuse(schedule, x0, t, noise)
        pred = denoiser(x_t, t, denoiser.embed_tokens(cond_ids[idx]), adapter=adapter)
        loss = F.mse_loss(pred, noise)
        if not torch.isfinite(loss):
            raise NumericalFailureError("fine-tuning loss diverged", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss.detach()))
    adapter.eval()

    if (_state_checksum(denoiser), _state_checksum(autoencoder)) != base_sums:
        raise NumericalFailureError("base weights changed during fine-tuning")
    adapter.manifest.setdefault("stages", []).append(
        {
            "stage": dataset.stage,
            "dataset_hash": dataset.content_hash(),
            "steps": steps,
            "lr": lr,
            "seed": seed,
        }
    )
    return trace


def generate_candidates(
    denoiser,
    autoencoder,
    adapter: LoraAdapter | None,
    schedule: NoiseSchedule,
    prompt: str,
    n: int,
    seed: int,
    out_dir,
    stage: int,
    num_steps: int = 50,
    batch: int = 16,
) -> list[dict]:
    """Sample ``n`` images from pure noise with the adapter active.

    Images and a JSONL manifest land in ``out_dir``; candidate ids embed
    the derived seed so disjoint seed ranges never collide.
    """
    from .data import save_image
    from .ddim import ddim_sample

    if n <= 0:
        raise InvalidInputError(f"n must be positive, got {n}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cond = denoiser.embed_prompt(prompt)
    shape = (1,) + autoencoder.latent_shape
    records: list[dict] = []
    manifest_path = out_dir / "candidates.jsonl"
    with manifest_path.open("a") as fh:
        for lo in range(0, n, batch):
            count = min(batch, n - lo)
            seeds = [derive_seed(seed, f"candidate/{lo + i}") for i in range(count)]
            noise = torch.cat(
                [torch.randn(shape, generator=generator(s, "init-noise")) for s in seeds]
            )
            latents, _ = ddim_sample(
                denoiser, schedule, noise, schedule.T, cond,
                adapter=adapter, num_steps=num_steps,
            )
            images = autoencoder.decode(latents).data
            for i in range(count):
                cand_id = f"cand-s{stage}-{seeds[i]:016x}"
                path = out_dir / f"{cand_id}.png"
                save_image(images[i], path)
                rec = {
                    "id": cand_id,
                    "path": str(path),
                    "seed": seeds[i],
                    "stage": stage,
                    "prompt": prompt,
                }
                fh.write(json.dumps(rec) + "\n")
                records.append(rec)
    return records
