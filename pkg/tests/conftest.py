"""Shared fixtures: one toy dataset and one trained model stack per session.

Training the autoencoder, denoiser and stage-1 style adapter takes a few
minutes on CPU, so trained weights are cached on disk keyed by the fixture
config hash.  Delete tests/_cache (or set TRISTYLE_TEST_CACHE=0) to force
retraining.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import pytest
import torch

from tristyle.autoencoder import AutoencoderConfig, ImageAutoencoder, train_autoencoder
from tristyle.data import apply_style_transform, generate_scene_dataset, save_image
from tristyle.denoiser import Denoiser, DenoiserConfig, encode_dataset, train_denoiser
from tristyle.lora import LoraAdapter, StageDataset, finetune_stage
from tristyle.pipeline import DiffusionStack
from tristyle.schedule import NoiseSchedule
from tristyle.text import encode_prompt

CACHE_VERSION = 4

FIXTURE_CFG = {
    "cache_version": CACHE_VERSION,
    "dataset": {"n": 192, "seed": 7},
    "ae": {"steps": 600, "batch_size": 16, "lr": 2e-3, "seed": 1},
    "denoiser": {"steps": 3000, "batch_size": 12, "lr": 2e-3, "seed": 2},
    "lora": {"steps": 2000, "batch_size": 4, "lr": 2e-3, "seed": 11, "rank": 8},
    "style_caption": "a house beside a tree",
}

_CACHE_DIR = Path(__file__).parent / "_cache"


def _cache_path() -> Path | None:
    if os.environ.get("TRISTYLE_TEST_CACHE", "1") == "0":
        return None
    key = hashlib.sha256(json.dumps(FIXTURE_CFG, sort_keys=True).encode()).hexdigest()[:16]
    return _CACHE_DIR / f"stack-{key}.pt"


@pytest.fixture(scope="session")
def toy_dataset():
    cfg = FIXTURE_CFG["dataset"]
    return generate_scene_dataset(cfg["n"], seed=cfg["seed"])


@pytest.fixture(scope="session")
def schedule():
    return NoiseSchedule.linear()


@pytest.fixture(scope="session")
def trained_models(toy_dataset, schedule, tmp_path_factory):
    """(autoencoder, eps_rec, denoiser, style_adapter, style_image_path)."""
    images, captions = toy_dataset
    style_dir = tmp_path_factory.mktemp("style")
    style_image = apply_style_transform(images[100])
    style_path = style_dir / "style.png"
    save_image(style_image, style_path)

    cache = _cache_path()
    if cache is not None and cache.exists():
        payload = torch.load(cache, weights_only=False)
        ae = ImageAutoencoder(AutoencoderConfig())
        ae.load_state_dict(payload["ae"])
        ae.eval()
        for p in ae.parameters():
            p.requires_grad_(False)
        denoiser = Denoiser(DenoiserConfig(base_channels=32))
        denoiser.load_state_dict(payload["denoiser"])
        denoiser.eval()
        adapter = LoraAdapter.for_denoiser(denoiser, rank=FIXTURE_CFG["lora"]["rank"])
        adapter.load_state_dict(payload["adapter"])
        adapter.eval()
        return ae, payload["eps_rec"], denoiser, adapter, style_path

    ae_cfg = FIXTURE_CFG["ae"]
    ae, _, eps_rec = train_autoencoder(
        images, steps=ae_cfg["steps"], batch_size=ae_cfg["batch_size"],
        lr=ae_cfg["lr"], seed=ae_cfg["seed"],
    )

    dn_cfg = FIXTURE_CFG["denoiser"]
    torch.manual_seed(dn_cfg["seed"])
    denoiser = Denoiser(DenoiserConfig(base_channels=32))
    latents = encode_dataset(ae, images)
    cond_ids = torch.stack([encode_prompt(c) for c in captions])
    train_denoiser(
        denoiser, latents, cond_ids, schedule, steps=dn_cfg["steps"],
        batch_size=dn_cfg["batch_size"], lr=dn_cfg["lr"], seed=dn_cfg["seed"],
    )

    lora_cfg = FIXTURE_CFG["lora"]
    adapter = LoraAdapter.for_denoiser(denoiser, rank=lora_cfg["rank"], seed=lora_cfg["seed"])
    dataset = StageDataset(
        stage=1, image_paths=(str(style_path),),
        captions=(FIXTURE_CFG["style_caption"],), quota=5,
    )
    finetune_stage(
        denoiser, ae, adapter, dataset, schedule, steps=lora_cfg["steps"],
        batch_size=lora_cfg["batch_size"], lr=lora_cfg["lr"], seed=lora_cfg["seed"],
    )

    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "ae": ae.state_dict(),
                "denoiser": denoiser.state_dict(),
                "adapter": adapter.state_dict(),
                "eps_rec": eps_rec,
            },
            cache,
        )
    return ae, eps_rec, denoiser, adapter, style_path


@pytest.fixture(scope="session")
def trained_ae(trained_models):
    return trained_models[0]


@pytest.fixture(scope="session")
def eps_rec(trained_models):
    return trained_models[1]


@pytest.fixture(scope="session")
def trained_denoiser(trained_models):
    return trained_models[2]


@pytest.fixture(scope="session")
def style_adapter(trained_models):
    return trained_models[3]


@pytest.fixture(scope="session")
def style_image_path(trained_models):
    return trained_models[4]


@pytest.fixture(scope="session")
def stack(trained_models, schedule):
    ae, _, denoiser, adapter, _ = trained_models
    return DiffusionStack(autoencoder=ae, denoiser=denoiser, schedule=schedule, adapter=adapter)


@pytest.fixture(scope="session")
def zero_adapter(trained_denoiser):
    return LoraAdapter.for_denoiser(trained_denoiser, seed=123)


@pytest.fixture(scope="session")
def latent_dataset(trained_ae, toy_dataset):
    images, captions = toy_dataset
    latents = encode_dataset(trained_ae, images)
    cond_ids = torch.stack([encode_prompt(c) for c in captions])
    return latents, cond_ids
