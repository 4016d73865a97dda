"""Deterministic seed derivation.

Every stochastic draw in the package flows from one root seed recorded in
the run manifest.  Sub-streams are derived by hashing the root seed with a
purpose tag, so adding a new consumer never perturbs existing streams.
"""

from __future__ import annotations

import hashlib

import torch


def derive_seed(root_seed: int, tag: str) -> int:
    """Return a stable 63-bit seed for the stream named by ``tag``."""
    digest = hashlib.sha256(f"{root_seed}/{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def generator(root_seed: int, tag: str) -> torch.Generator:
    """CPU generator seeded from ``(root_seed, tag)``."""
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(root_seed, tag))
    return gen


def randn(shape, root_seed: int, tag: str, dtype=torch.float32) -> torch.Tensor:
    """Standard-normal tensor drawn from the derived stream."""
    return torch.randn(shape, generator=generator(root_seed, tag), dtype=dtype)
