"""Tiny fixed vocabulary and prompt encoding.

The denoiser is conditioned through a learned embedding table over this
vocabulary (content nouns, style tokens, color words, glue words).  Prompts
are whitespace-tokenized after stripping punctuation; out-of-vocabulary
tokens are rejected with the offending words listed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import torch

from .errors import InvalidInputError

# Token id 0 is the unconditional/empty-prompt token; id 1 pads.
UNCOND_TOKEN = "<uncond>"
PAD_TOKEN = "<pad>"

CONTENT_WORDS = [
    "house", "tree", "dog", "mountain", "sun", "moon", "field", "river",
    "circle", "square", "sky", "flower", "boat", "hill",
]
COLOR_WORDS = [
    "red", "green", "blue", "yellow", "purple", "orange",
    "white", "black", "brown", "gray", "pink", "teal",
]
STYLE_WORDS = [
    "style", "painting", "oil", "watercolor", "sketch", "swirl",
    "styleref",  # the learned style token bound during fine-tuning
]
GLUE_WORDS = ["a", "an", "the", "of", "in", "on", "beside", "with", "and", "under"]

VOCABULARY = [UNCOND_TOKEN, PAD_TOKEN] + CONTENT_WORDS + COLOR_WORDS + STYLE_WORDS + GLUE_WORDS

_TOKEN_IDS = {tok: i for i, tok in enumerate(VOCABULARY)}
_WORD_RE = re.compile(r"[a-z<>]+")

MAX_TOKENS = 12


def tokenize(prompt: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _WORD_RE.findall(prompt.lower())


def encode_prompt(prompt: str) -> torch.Tensor:
    """Token-id tensor of length MAX_TOKENS, padded; empty prompt is unconditional."""
    words = tokenize(prompt)
    unknown = [w for w in words if w not in _TOKEN_IDS]
    if unknown:
        raise InvalidInputError(f"out-of-vocabulary tokens: {unknown}")
    if not words:
        words = [UNCOND_TOKEN]
    words = words[:MAX_TOKENS]
    ids = [_TOKEN_IDS[w] for w in words]
    ids += [_TOKEN_IDS[PAD_TOKEN]] * (MAX_TOKENS - len(ids))
    return torch.tensor(ids, dtype=torch.long)


@dataclass(frozen=True)
class TextEmbedding:
    """Embedded prompt: (tokens, dim) float tensor plus its source string."""

    vector: torch.Tensor
    source_prompt: str

    def __post_init__(self):
        if self.vector.ndim != 2:
            raise InvalidInputError("text embedding must be (tokens, dim)")
        if not torch.isfinite(self.vector).all():
            raise InvalidInputError("text embedding contains non-finite entries")
