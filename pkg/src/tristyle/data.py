"""Synthetic scene dataset, PNG IO, and the fixed toy "style" transform.

Scenes are simple colored objects (house, tree, sun, mountain) over a
gradient background, captioned compositionally ("a red house beside a
green tree") so the denoiser can learn color and content conditioning.
The style transform — a sepia color remap plus diagonal stripe texture —
plays the role of a reference artwork's style at desk scale.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InvalidInputError

PALETTE = {
    "red": (200, 40, 40),
    "green": (40, 160, 60),
    "blue": (50, 80, 200),
    "yellow": (230, 200, 50),
    "purple": (140, 60, 180),
    "orange": (240, 140, 40),
    "white": (240, 240, 240),
    "black": (25, 25, 25),
    "brown": (140, 90, 50),
    "gray": (128, 128, 128),
    "pink": (240, 150, 190),
    "teal": (40, 160, 160),
}
DRAWABLE = ("house", "tree", "sun", "mountain")
SKY = [(150, 190, 235), (200, 220, 245), (235, 235, 210), (180, 200, 230)]
GROUND = [(110, 150, 90), (160, 140, 100), (130, 130, 130), (90, 130, 110)]


def _fill(img: np.ndarray, mask: np.ndarray, rgb) -> None:
    img[mask] = np.array(rgb, dtype=np.float32) / 255.0


def _draw_object(img: np.ndarray, kind: str, rgb, cx: int, cy: int, r: int) -> None:
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "house":
        body = (abs(xx - cx) <= r) & (yy >= cy - r // 2) & (yy <= cy + r)
        roof = (yy >= cy - r) & (yy < cy - r // 2) & (abs(xx - cx) <= (yy - (cy - r)))
        _fill(img, body | roof, rgb)
    elif kind == "tree":
        trunk = (abs(xx - cx) <= max(1, r // 4)) & (yy >= cy) & (yy <= cy + r)
        crown = (xx - cx) ** 2 + (yy - cy + r // 2) ** 2 <= r * r
        _fill(img, trunk, (110, 70, 40))
        _fill(img, crown, rgb)
    elif kind == "sun":
        disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        _fill(img, disc, rgb)
    elif kind == "mountain":
        tri = (yy >= cy - r) & (yy <= cy + r) & (abs(xx - cx) <= (yy - (cy - r)) * 0.8)
        _fill(img, tri, rgb)
    else:
        raise InvalidInputError(f"no drawing rule for object '{kind}'")


def render_scene(rng: np.random.Generator, size: int = 64) -> tuple[torch.Tensor, str]:
    """One random scene and its content caption."""
    img = np.zeros((size, size, 3), dtype=np.float32)
    sky = np.array(SKY[rng.integers(len(SKY))], dtype=np.float32) / 255.0
    ground = np.array(GROUND[rng.integers(len(GROUND))], dtype=np.float32) / 255.0
    horizon = int(size * rng.uniform(0.55, 0.75))
    ramp = np.linspace(0, 1, size)[:, None, None]
    img[:] = sky * (1 - ramp) + sky * 0.8 * ramp
    img[horizon:] = ground

    colors = list(PALETTE)
    kinds = list(DRAWABLE)
    rng.shuffle(kinds)
    n_obj = int(rng.integers(1, 3))
    parts = []
    cx_slots = [size // 4, 3 * size // 4]
    rng.shuffle(cx_slots)
    for i in range(n_obj):
        kind = kinds[i]
        color = colors[rng.integers(len(colors))]
        r = int(rng.integers(size // 8, size // 5))
        cx = int(cx_slots[i] + rng.integers(-size // 10, size // 10))
        cy = horizon - r // 2 if kind != "sun" else int(rng.integers(r + 2, horizon - r - 2))
        _draw_object(img, kind, PALETTE[color], cx, cy, r)
        parts.append(f"a {color} {kind}")
    caption = " beside ".join(parts)
    return torch.from_numpy(np.clip(img, 0, 1)).permute(2, 0, 1).contiguous(), caption


def generate_scene_dataset(n: int, seed: int = 0, size: int = 64) -> tuple[torch.Tensor, list[str]]:
    rng = np.random.default_rng(seed)
    pairs = [render_scene(rng, size) for _ in range(n)]
    return torch.stack([p[0] for p in pairs]), [p[1] for p in pairs]


def apply_style_transform(image: torch.Tensor) -> torch.Tensor:
    """The fixed color/texture transform standing in for a reference style.

    Sepia-leaning color matrix plus a diagonal stripe texture; accepts and
    returns (..., 3, H, W) in [0, 1].
    """
    m = torch.tensor(
        [[0.393, 0.769, 0.189], [0.349, 0.686, 0.168], [0.272, 0.534, 0.131]],
        dtype=image.dtype,
    )
    x = torch.einsum("oc,...chw->...ohw", m, image)
    h, w = x.shape[-2:]
    yy, xx = torch.meshgrid(torch.arange(h), torch.arange(w), indexing="ij")
    stripes = 0.12 * torch.sin(2 * math.pi * (xx + yy).to(x.dtype) / 8.0)
    return (x + stripes).clamp(0, 1)


def save_image(image: torch.Tensor, path) -> None:
    """Write a (3, H, W) tensor in [0, 1] as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = (image.clamp(0, 1).permute(1, 2, 0).numpy() * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_image(path) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise InvalidInputError(f"unreadable image {path}: {exc}") from exc
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def image_hash(path) -> str:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"image not found: {path}")
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(out_dir, images: torch.Tensor, captions: list[str]) -> list[str]:
    """PNG-per-image directory with a captions.json sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"img_{i:05d}.png"
        save_image(img, out_dir / name)
        names.append(name)
    (out_dir / "captions.json").write_text(
        json.dumps(dict(zip(names, captions)), indent=2)
    )
    return names


def load_dataset(dir_path) -> tuple[torch.Tensor, list[str], list[str]]:
    """Returns (images, captions, paths); missing captions default to ''."""
    dir_path = Path(dir_path)
    files = sorted(dir_path.glob("*.png"))
    if not files:
        raise InvalidInputError(f"no PNG images in {dir_path}")
    captions_file = dir_path / "captions.json"
    table = json.loads(captions_file.read_text()) if captions_file.exists() else {}
    images = torch.stack([load_image(f) for f in files])
    captions = [table.get(f.name, "") for f in files]
    return images, captions, [str(f) for f in files]
