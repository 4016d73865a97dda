"""Self-attention capture and injection across coupled denoising passes.

Three weight-sharing passes cooperate: a style-guidance pass and an
inversion pass record their per-(layer, timestep) Query/Key/Value tensors
into :class:`AttentionCache`; the main pass then swaps in the style pass's
Key/Value while fusing its own Query with the inversion pass's Query:

    Q_f = beta * Q_inv + (1 - beta) * Q_main
    out = softmax(Q_f K_style^T / sqrt(d)) V_style

applied on the named decoder self-attention layers only.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import torch

from .errors import InvalidInputError, StateError


class AttentionCache:
    """Per-(layer, timestep) store of captured Q/K/V from one denoising pass.

    Entries are written exactly once per key; tensors are stored as
    detached clones and must be treated as frozen by readers.
    """

    def __init__(self, pass_id: str = ""):
        self.pass_id = pass_id
        self._store: dict[tuple[str, int], dict[str, torch.Tensor]] = {}

    def store(self, layer: str, t: int, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> None:
        key = (layer, int(t))
        if key in self._store:
            raise StateError(f"duplicate capture for {key} in pass '{self.pass_id}'")
        entry = {"q": q.detach().clone(), "k": k.detach().clone(), "v": v.detach().clone()}
        for name, tensor in entry.items():
            if not torch.isfinite(tensor).all():
                raise InvalidInputError(f"non-finite {name} captured at {key}")
        self._store[key] = entry

    def has(self, layer: str, t: int) -> bool:
        return (layer, int(t)) in self._store

    def get(self, layer: str, t: int) -> dict[str, torch.Tensor]:
        key = (layer, int(t))
        if key not in self._store:
            raise StateError(
                f"missing cache entry for layer '{key[0]}' at timestep {key[1]} "
                f"in pass '{self.pass_id}'"
            )
        return self._store[key]

    def keys(self) -> list[tuple[str, int]]:
        return sorted(self._store.keys())

    def __len__(self) -> int:
        return len(self._store)


@dataclass(frozen=True)
class InjectionPolicy:
    """Which layers and timesteps receive injection, and with what strength.

    ``beta`` weights the inversion-pass query in the fusion (1 = pure
    inversion query).  ``active_timestep_range`` is an inclusive
    (low, high) window in training timesteps; None means every step.
    """

    target_layers: tuple[str, ...]
    beta: float = 0.6
    swap_kv: bool = True
    fuse_query: bool = True
    active_timestep_range: tuple[int, int] | None = None
    experimental_adain: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidInputError(f"beta must lie in [0, 1], got {self.beta}")
        object.__setattr__(self, "target_layers", tuple(self.target_layers))
        if self.active_timestep_range is not None:
            lo, hi = self.active_timestep_range
            if lo > hi:
                raise InvalidInputError(f"empty timestep range ({lo}, {hi})")
            object.__setattr__(self, "active_timestep_range", (int(lo), int(hi)))

    def active_at(self, t: int) -> bool:
        if self.active_timestep_range is None:
            return True
        lo, hi = self.active_timestep_range
        return lo <= t <= hi

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "InjectionPolicy":
        raw = json.loads(text)
        if raw.get("active_timestep_range") is not None:
            raw["active_timestep_range"] = tuple(raw["active_timestep_range"])
        raw["target_layers"] = tuple(raw["target_layers"])
        return cls(**raw)


def fuse_queries(q_i: torch.Tensor, q_s: torch.Tensor, beta: float) -> torch.Tensor:
    """Convex combination ``beta * q_i + (1 - beta) * q_s``.

    The endpoints return exact copies of the corresponding input so that
    beta=0 and beta=1 are bit-identical to q_s and q_i respectively.
    """
    if q_i.shape != q_s.shape:
        raise InvalidInputError(
            f"query shapes differ: {tuple(q_i.shape)} vs {tuple(q_s.shape)}"
        )
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError(f"beta must lie in [0, 1], got {beta}")
    if beta == 0.0:
        return q_s.clone()
    if beta == 1.0:
        return q_i.clone()
    return beta * q_i + (1.0 - beta) * q_s


def styled_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    scale: float | None = None,
    num_heads: int = 1,
) -> torch.Tensor:
    """Multi-head scaled dot-product attention ``softmax(q k^T scale) v``.

    Accepts (tokens, channels) or (batch, tokens, channels); channels are
    split into ``num_heads`` heads and re-merged.  ``scale`` defaults to
    1/sqrt(head_dim).
    """
    squeeze = q.ndim == 2
    if squeeze:
        q, k, v = q.unsqueeze(0), k.unsqueeze(0), v.unsqueeze(0)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise InvalidInputError("attention inputs must be (batch, tokens, channels)")
    if k.shape[1] != v.shape[1]:
        raise InvalidInputError(
            f"key/value token counts differ: {k.shape[1]} vs {v.shape[1]}"
        )
    if q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2] or k.shape[2] != v.shape[2]:
        raise InvalidInputError("query/key/value batch or channel dims are inconsistent")
    b, nq, c = q.shape
    if c % num_heads:
        raise InvalidInputError(f"channels {c} not divisible by num_heads {num_heads}")
    d = c // num_heads
    if scale is None:
        scale = 1.0 / math.sqrt(d)

    def split(x):
        return x.reshape(b, x.shape[1], num_heads, d).permute(0, 2, 1, 3)

    out = torch.nn.functional.scaled_dot_product_attention(
        split(q), split(k), split(v), scale=scale
    )
    out = out.permute(0, 2, 1, 3).reshape(b, nq, c)
    return out.squeeze(0) if squeeze else out


def channel_adain(x: torch.Tensor, ref: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Match channel-wise mean/std of ``x`` to ``ref`` over the token axis."""
    mu_x, sd_x = x.mean(dim=-2, keepdim=True), x.std(dim=-2, keepdim=True)
    mu_r, sd_r = ref.mean(dim=-2, keepdim=True), ref.std(dim=-2, keepdim=True)
    return (x - mu_x) / (sd_x + eps) * (sd_r + eps) + mu_r


class CaptureHooks:
    """Records Q/K/V into a cache without perturbing the pass.

    ``layers=None`` captures everywhere; otherwise layers outside the set
    are a no-op.
    """

    def __init__(self, cache: AttentionCache, layers=None):
        self.cache = cache
        self.layers = None if layers is None else set(layers)

    def __call__(self, layer: str, t: int, q, k, v):
        if self.layers is None or layer in self.layers:
            self.cache.store(layer, t, q, k, v)
        return q, k, v


class InjectionHooks:
    """Applies query fusion and key/value swap on the main pass."""

    def __init__(
        self,
        policy: InjectionPolicy,
        style_cache: AttentionCache | None,
        inversion_cache: AttentionCache | None,
    ):
        if policy.fuse_query and inversion_cache is None:
            raise StateError("query fusion requires an inversion-pass cache")
        if policy.swap_kv and style_cache is None:
            raise StateError("key/value swap requires a style-pass cache")
        self.policy = policy
        self.style_cache = style_cache
        self.inversion_cache = inversion_cache

    def __call__(self, layer: str, t: int, q, k, v):
        pol = self.policy
        if layer not in pol.target_layers or not pol.active_at(t):
            return q, k, v
        if pol.fuse_query:
            q = fuse_queries(self.inversion_cache.get(layer, t)["q"], q, pol.beta)
        if pol.swap_kv:
            entry = self.style_cache.get(layer, t)
            k, v = entry["k"], entry["v"]
            if pol.experimental_adain:
                q = channel_adain(q, entry["q"])
        return q, k, v


class ComposedHooks:
    """Applies several hook sets in order (e.g. capture plus injection)."""

    def __init__(self, *hooks):
        self.hooks = [h for h in hooks if h is not None]

    def __call__(self, layer: str, t: int, q, k, v):
        for hook in self.hooks:
            q, k, v = hook(layer, t, q, k, v)
        return q, k, v


def install(
    policy: InjectionPolicy,
    role_map: dict,
    decoder_layers=None,
) -> InjectionHooks:
    """Wire caches to the main pass per the policy.

    ``role_map`` assigns caches to the 'style' and 'inversion' roles; the
    main pass is the live one the returned hooks are attached to.  When
    ``decoder_layers`` is given, target layers must be a subset of it.
    """
    if decoder_layers is not None:
        extra = set(policy.target_layers) - set(decoder_layers)
        if extra:
            raise InvalidInputError(
                f"policy targets non-decoder attention layers: {sorted(extra)}"
            )
    return InjectionHooks(
        policy,
        style_cache=role_map.get("style"),
        inversion_cache=role_map.get("inversion"),
    )
