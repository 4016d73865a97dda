"""Single-file checkpoints: named tensors plus a JSON-able config manifest."""

from __future__ import annotations

from pathlib import Path

import torch

from .errors import InvalidInputError


def save_checkpoint(path, tensors: dict, manifest: dict) -> None:
    """Atomically write ``{tensors, manifest}`` to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save({"tensors": tensors, "manifest": manifest}, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or "tensors" not in payload or "manifest" not in payload:
        raise InvalidInputError(f"not a tristyle checkpoint: {path}")
    return payload["tensors"], payload["manifest"]
