"""Semantic-gap caption construction.

An image is captioned in two steps: a captioner produces the full
description, then a language-model edit deletes every style descriptor,
leaving the content-only caption used as fine-tuning text.  The gap
between image and stripped caption is what fine-tuning attributes to
style.

Both external clients speak minimal JSON-over-HTTP and have deterministic
in-process mocks; the rule fallback deletes lexicon entries directly.  LLM
output is always post-validated against the lexicon: one re-prompt, then
an error — stripping never silently degrades.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import httpx

from .data import image_hash, load_image
from .errors import (
    DegenerateCaptionError,
    InvalidInputError,
    StateError,
    TransportError,
)

STRIP_INSTRUCTION_V1 = (
    "Remove every word or phrase describing artistic style, medium, texture "
    "or artist identity from the caption. Keep all content words in their "
    "original order. Reply with the edited caption only."
)


@dataclass(frozen=True)
class StyleLexicon:
    """Versioned list of style words and phrases, one entry per line."""

    version: str
    entries: tuple[str, ...]

    @classmethod
    def load(cls, path=None) -> "StyleLexicon":
        if path is None:
            path = Path(__file__).parent / "data" / "style_lexicon.txt"
        path = Path(path)
        version = "unversioned"
        entries = []
        for line in path.read_text().splitlines():
            line = line.strip().lower()
            if line.startswith("# lexicon-version:"):
                version = line.split(":", 1)[1].strip()
            elif line and not line.startswith("#"):
                entries.append(line)
        return cls(version=version, entries=tuple(entries))

    @property
    def phrases(self) -> list[tuple[str, ...]]:
        """Multi-token entries, longest first."""
        out = [tuple(e.split()) for e in self.entries if " " in e]
        return sorted(out, key=len, reverse=True)

    @property
    def words(self) -> frozenset[str]:
        return frozenset(e for e in self.entries if " " not in e)

    def tokens_in(self, tokens: list[str]) -> set[str]:
        return set(tokens) & self.words


def _tokenize(text: str) -> list[str]:
    import re

    return re.findall(r"[a-z0-9'\-]+", text.lower())


def strip_style_tokens(caption: str, lexicon: StyleLexicon) -> str:
    """Rule fallback for the style-deleting edit.

    Deletes lexicon phrases (longest first), then lexicon words,
    preserving the order of everything else.
    """
    tokens = _tokenize(caption)
    keep = [True] * len(tokens)
    for phrase in lexicon.phrases:
        k = len(phrase)
        for i in range(len(tokens) - k + 1):
            if all(keep[i : i + k]) and tuple(tokens[i : i + k]) == phrase:
                for j in range(i, i + k):
                    keep[j] = False
    words = lexicon.words
    result = [t for t, ok in zip(tokens, keep) if ok and t not in words]
    return " ".join(result)


class MockCaptioner:
    """Offline captioner: fixture table first, else hash-derived caption."""

    id = "mock-captioner-v1"

    _COLORS = ("red", "blue", "green", "yellow", "purple", "orange")
    _NOUNS = ("house", "tree", "dog", "mountain", "sun", "boat")
    _STYLES = ("oil painting", "watercolor", "sketch")

    def __init__(self, fixtures: dict[str, str] | None = None):
        self.fixtures = dict(fixtures or {})

    def caption_image(self, path) -> str:
        digest = image_hash(path)
        if digest in self.fixtures:
            return self.fixtures[digest]
        raw = hashlib.sha256(digest.encode()).digest()
        color = self._COLORS[raw[0] % len(self._COLORS)]
        noun = self._NOUNS[raw[1] % len(self._NOUNS)]
        noun2 = self._NOUNS[raw[2] % len(self._NOUNS)]
        style = self._STYLES[raw[3] % len(self._STYLES)]
        return f"a {color} {noun} beside a {noun2}, {style} style"


class HttpCaptioner:
    """POST /caption client: base64 image in, {"caption": ...} out."""

    def __init__(self, base_url: str, timeout: float = 10.0, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._client = client or httpx.Client()
        self.id = f"http-captioner@{self.base_url}"

    def caption_image(self, path) -> str:
        payload = {"image_b64": base64.b64encode(Path(path).read_bytes()).decode()}
        try:
            resp = self._client.post(
                f"{self.base_url}/caption", json=payload, timeout=self.timeout
            )
            resp.raise_for_status()
        except httpx.TimeoutException as exc:
            raise TransportError(f"captioner timed out: {exc}", retryable=True) from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"captioner unavailable: {exc}", retryable=True) from exc
        caption = resp.json().get("caption", "")
        if not caption:
            raise TransportError("captioner returned an empty caption", retryable=False)
        return caption


class RuleLlm:
    """The deterministic offline fallback for the style-deleting edit."""

    id = "rule-fallback"

    def __init__(self, lexicon: StyleLexicon | None = None):
        self.lexicon = lexicon or StyleLexicon.load()

    def edit(self, text: str, instruction: str) -> str:
        return strip_style_tokens(text, self.lexicon)


class MockLlm:
    """Scripted LLM responses, for exercising the re-prompt path in tests."""

    id = "mock-llm-v1"

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.calls = 0

    def edit(self, text: str, instruction: str) -> str:
        self.calls += 1
        if not self.responses:
            raise TransportError("mock LLM exhausted", retryable=False)
        return self.responses.pop(0)


class HttpLlm:
    """POST /edit client: {"text", "instruction"} in, {"text"} out."""

    def __init__(self, base_url: str, timeout: float = 10.0, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._client = client or httpx.Client()
        self.id = f"http-llm@{self.base_url}"

    def edit(self, text: str, instruction: str) -> str:
        try:
            resp = self._client.post(
                f"{self.base_url}/edit",
                json={"text": text, "instruction": instruction},
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except httpx.TimeoutException as exc:
            raise TransportError(f"LLM endpoint timed out: {exc}", retryable=True) from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"LLM endpoint unavailable: {exc}", retryable=True) from exc
        return resp.json().get("text", "")


@dataclass(frozen=True)
class CaptionPair:
    """Full caption, its style-stripped form, and where both came from."""

    t_clip: str
    t_wo_style: str
    provenance: dict
    image_ref: str
    image_hash: str

    def validate(self, lexicon: StyleLexicon) -> None:
        tokens = _tokenize(self.t_wo_style)
        if not tokens:
            raise DegenerateCaptionError(
                f"stripped caption for {self.image_ref} is empty"
            )
        leftover = lexicon.tokens_in(tokens)
        if leftover:
            raise StateError(
                f"style tokens survived stripping for {self.image_ref}: {sorted(leftover)}"
            )
        if self.provenance.get("llm_id") == RuleLlm.id:
            source = _tokenize(self.t_clip)
            it = iter(source)
            if not all(tok in it for tok in tokens):
                raise StateError(
                    "rule fallback must preserve content tokens in order"
                )

    def to_dict(self) -> dict:
        return {
            "t_clip": self.t_clip,
            "t_wo_style": self.t_wo_style,
            "provenance": self.provenance,
            "image_ref": self.image_ref,
            "image_hash": self.image_hash,
        }


def caption(image_path, captioner) -> str:
    """Caption one image; unreadable files are rejected before the client call."""
    load_image(image_path)  # raises InvalidInputError on unreadable input
    text = captioner.caption_image(image_path)
    if not text.strip():
        raise InvalidInputError(f"captioner produced an empty caption for {image_path}")
    return text


def strip_style(caption_text: str, llm=None, lexicon: StyleLexicon | None = None) -> str:
    """Delete style descriptors from a caption, post-validated.

    If the first LLM edit leaves lexicon tokens behind it is re-prompted
    once; a second failure raises.  An empty result means every token was
    stylistic and the caller must supply a manual caption.
    """
    if not caption_text.strip():
        raise InvalidInputError("cannot strip an empty caption")
    lexicon = lexicon or StyleLexicon.load()
    llm = llm or RuleLlm(lexicon)
    stripped = llm.edit(caption_text, STRIP_INSTRUCTION_V1)
    leftover = lexicon.tokens_in(_tokenize(stripped))
    if leftover:
        stripped = llm.edit(caption_text, STRIP_INSTRUCTION_V1)
        leftover = lexicon.tokens_in(_tokenize(stripped))
        if leftover:
            raise StateError(
                f"LLM failed to remove style tokens after re-prompt: {sorted(leftover)}"
            )
    if not stripped.strip():
        raise DegenerateCaptionError(
            "every token was stylistic; supply a manual caption"
        )
    return stripped.strip()


class PairStore:
    """JSON-lines persistence of caption pairs, keyed by image hash + client ids."""

    def __init__(self, path):
        self.path = Path(path)
        self._index: dict[tuple[str, str, str], CaptionPair] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError:
                    continue  # tolerate a truncated trailing line
                pair = CaptionPair(**raw)
                self._index[self._key(pair)] = pair

    @staticmethod
    def _key(pair: CaptionPair) -> tuple[str, str, str]:
        prov = pair.provenance
        return (pair.image_hash, prov.get("captioner_id", ""), prov.get("llm_id", ""))

    def get(self, image_hash: str, captioner_id: str, llm_id: str) -> CaptionPair | None:
        return self._index.get((image_hash, captioner_id, llm_id))

    def add(self, pair: CaptionPair) -> CaptionPair:
        key = self._key(pair)
        if key in self._index:
            return self._index[key]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a") as fh:
            fh.write(json.dumps(pair.to_dict()) + "\n")
        self._index[key] = pair
        return pair

    def all(self) -> list[CaptionPair]:
        return list(self._index.values())


def build_training_pair(
    image_path,
    captioner=None,
    llm=None,
    store: PairStore | None = None,
    lexicon: StyleLexicon | None = None,
) -> CaptionPair:
    """Image -> captioned -> stripped -> persisted, idempotent per clients."""
    lexicon = lexicon or StyleLexicon.load()
    captioner = captioner or MockCaptioner()
    llm = llm or RuleLlm(lexicon)
    digest = image_hash(image_path)
    if store is not None:
        existing = store.get(digest, captioner.id, llm.id)
        if existing is not None:
            return existing
    full = caption(image_path, captioner)
    stripped = strip_style(full, llm, lexicon)
    pair = CaptionPair(
        t_clip=full,
        t_wo_style=stripped,
        provenance={"captioner_id": captioner.id, "llm_id": llm.id},
        image_ref=str(image_path),
        image_hash=digest,
    )
    pair.validate(lexicon)
    if store is not None:
        pair = store.add(pair)
    return pair
