"""Metric battery over pluggable embedders.

Provides a Frechet distance between Gaussian fits of embedding sets, mean
pairwise cosine similarity, a text-image score, a multi-layer perceptual
distance from the frozen toy models, and intra-cluster diversity.  Real
CLIP/DINO/LPIPS networks slot in behind the same Embedder interface; the
desk-scale defaults need no pretrained downloads.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidInputError, NumericalFailureError, UndefinedMetricError
from .text import COLOR_WORDS, tokenize


class Embedder:
    """Deterministic embedding interface: same input, same vector."""

    name: str = "embedder"
    dim: int = 0
    modality: str = "image"  # "image" | "text" | "image+text"

    def embed_images(self, images: torch.Tensor) -> np.ndarray:
        raise NotImplementedError

    def embed_texts(self, prompts: list[str]) -> np.ndarray:
        raise NotImplementedError


class BottleneckEmbedder(Embedder):
    """Pooled features from the frozen toy autoencoder's bottleneck.

    Per latent channel: global mean, global std, and 2x2 pooled means,
    giving 6 * latent_channels dimensions.
    """

    modality = "image"

    def __init__(self, autoencoder):
        self.autoencoder = autoencoder
        c = autoencoder.config.latent_channels
        self.dim = 6 * c
        self.name = f"bottleneck{self.dim}"

    @torch.no_grad()
    def embed_images(self, images: torch.Tensor) -> np.ndarray:
        if images.ndim == 3:
            images = images.unsqueeze(0)
        z = self.autoencoder.encode(images).data
        means = z.mean(dim=(2, 3))
        stds = z.std(dim=(2, 3))
        pooled = torch.nn.functional.adaptive_avg_pool2d(z, 2).flatten(1)
        out = torch.cat([means, stds, pooled], dim=1).double().numpy()
        assert out.shape[1] == self.dim
        return out


class HistogramJointEmbedder(Embedder):
    """Joint color-statistics space for images and color-word prompts.

    Images embed as per-channel means and stds; prompts embed as the mean
    palette anchor of their color words with a neutral std block, so
    "a red house" lands near red-dominant images.
    """

    modality = "image+text"
    dim = 6
    name = "histogram6"

    def __init__(self, palette: dict[str, tuple[int, int, int]] | None = None):
        if palette is None:
            from .data import PALETTE

            palette = PALETTE
        self.palette = palette

    def embed_images(self, images: torch.Tensor) -> np.ndarray:
        if images.ndim == 3:
            images = images.unsqueeze(0)
        means = images.mean(dim=(2, 3))
        stds = images.std(dim=(2, 3))
        return torch.cat([means, stds], dim=1).double().numpy()

    def embed_texts(self, prompts: list[str]) -> np.ndarray:
        rows = []
        for prompt in prompts:
            anchors = [self.palette[w] for w in tokenize(prompt) if w in self.palette]
            rgb = np.mean(anchors, axis=0) / 255.0 if anchors else np.full(3, 0.5)
            rows.append(np.concatenate([rgb, np.full(3, 0.25)]))
        return np.asarray(rows, dtype=np.float64)


class PerceptualDistance:
    """Multi-layer feature distance; zero iff the inputs are identical.

    The stack always contains the raw pixels plus 2x and 4x average-pooled
    levels; when the frozen autoencoder (and optionally the denoiser) are
    supplied, latent features and denoiser encoder taps are appended with
    LPIPS-style channel normalization.
    """

    def __init__(self, autoencoder=None, denoiser=None):
        self.autoencoder = autoencoder
        self.denoiser = denoiser
        parts = ["pixel"]
        if autoencoder is not None:
            parts.append("latent")
        if denoiser is not None:
            parts.append("encoder")
        self.name = "perceptual-" + "+".join(parts)

    @torch.no_grad()
    def _features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [
            x,
            torch.nn.functional.avg_pool2d(x, 2),
            torch.nn.functional.avg_pool2d(x, 4),
        ]
        if self.autoencoder is not None:
            z = self.autoencoder.encode(x).data
            feats.append(z)
            if self.denoiser is not None:
                feats.extend(self.denoiser.encoder_features(z))
        return feats

    @staticmethod
    def _normalize(f: torch.Tensor) -> torch.Tensor:
        return f / f.norm(dim=1, keepdim=True).clamp_min(1e-8)

    @torch.no_grad()
    def __call__(self, a: torch.Tensor, b: torch.Tensor) -> float:
        if a.ndim == 3:
            a = a.unsqueeze(0)
        if b.ndim == 3:
            b = b.unsqueeze(0)
        if a.shape != b.shape:
            raise InvalidInputError(
                f"resolution mismatch: {tuple(a.shape)} vs {tuple(b.shape)}"
            )
        fa, fb = self._features(a), self._features(b)
        total = 0.0
        for i, (x, y) in enumerate(zip(fa, fb)):
            if i == 0:
                total += float(((x - y) ** 2).mean())  # raw pixels anchor the iff-zero contract
            else:
                total += float(((self._normalize(x) - self._normalize(y)) ** 2).mean())
        return total / len(fa)


def _sqrtm_trace(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """Tr((cov_a cov_b)^{1/2}) via the symmetric eigendecomposition form."""
    vals_a, vecs_a = np.linalg.eigh(cov_a)
    sqrt_a = (vecs_a * np.sqrt(np.clip(vals_a, 0, None))) @ vecs_a.T
    inner = sqrt_a @ cov_b @ sqrt_a
    inner = (inner + inner.T) / 2
    vals = np.linalg.eigvalsh(inner)
    return float(np.sqrt(np.clip(vals, 0, None)).sum())


def frechet_distance(set_a, set_b) -> float:
    """Frechet distance between Gaussian fits of two embedding sets.

        ||mu_a - mu_b||^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2})

    Eigen-decomposition computes the square-root trace; on failure a
    1e-10 jitter is added to both covariances and the computation retried
    once before raising a numerical error.
    """
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidInputError("embedding sets must be 2-D with a common dimension")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InvalidInputError("need at least 2 samples per set to fit a covariance")
    dim = a.shape[1]
    if min(a.shape[0], b.shape[0]) < dim + 1:
        warnings.warn(
            f"sample count below dim+1={dim + 1}; covariance estimate is rank-deficient",
            stacklevel=2,
        )
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    diff = mu_a - mu_b
    try:
        sqrt_trace = _sqrtm_trace(cov_a, cov_b)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.eye(dim)
        try:
            sqrt_trace = _sqrtm_trace(cov_a + jitter, cov_b + jitter)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError(
                "covariance square root failed even after 1e-10 jitter retry"
            ) from exc
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * sqrt_trace)
    return max(value, 0.0)


def _check_norms(emb: np.ndarray, label: str) -> np.ndarray:
    norms = np.linalg.norm(emb, axis=1)
    bad = np.nonzero(norms == 0)[0]
    if bad.size:
        raise InvalidInputError(f"zero-norm embedding in {label} at index {int(bad[0])}")
    return emb / norms[:, None]


def pairwise_similarity_score(samples, references) -> float:
    """Mean cosine similarity over all (sample, reference) embedding pairs."""
    s = np.asarray(samples, dtype=np.float64)
    r = np.asarray(references, dtype=np.float64)
    if s.size == 0 or r.size == 0:
        raise InvalidInputError("similarity requires non-empty embedding sets")
    s = _check_norms(s, "samples")
    r = _check_norms(r, "references")
    return float((s @ r.T).mean())


def text_image_score(images: torch.Tensor, prompt: str, embedder: Embedder) -> float:
    """Mean cosine between image embeddings and the prompt embedding."""
    if embedder.modality != "image+text":
        raise InvalidInputError(
            f"embedder '{embedder.name}' does not support both modalities"
        )
    if images.numel() == 0 or images.shape[0] == 0:
        raise InvalidInputError("text_image_score requires at least one image")
    img = _check_norms(np.asarray(embedder.embed_images(images)), "images")
    txt = _check_norms(np.asarray(embedder.embed_texts([prompt])), "prompt")
    return float((img @ txt.T).mean())


def intra_cluster_lpips(samples: torch.Tensor, references: torch.Tensor, distance) -> float:
    """Diversity: mean over clusters of mean pairwise intra-cluster distance.

    Each sample joins its nearest reference's cluster; clusters with a
    single member carry no pairwise term.  If every occupied cluster is a
    singleton the metric is undefined.
    """
    n, m = samples.shape[0], references.shape[0]
    if n == 0 or m == 0:
        raise InvalidInputError("need samples and references")
    assignment = []
    for i in range(n):
        dists = [distance(samples[i], references[j]) for j in range(m)]
        assignment.append(int(np.argmin(dists)))
    cluster_means = []
    for j in range(m):
        members = [i for i, a in enumerate(assignment) if a == j]
        if len(members) < 2:
            continue
        pair_d = [
            distance(samples[p], samples[q])
            for ai, p in enumerate(members)
            for q in members[ai + 1 :]
        ]
        cluster_means.append(float(np.mean(pair_d)))
    if not cluster_means:
        raise UndefinedMetricError("every occupied cluster is a singleton")
    return float(np.mean(cluster_means))


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    n_samples: int
    n_references: int
    embedder: str
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "n_samples": self.n_samples,
            "n_references": self.n_references,
            "embedder": self.embedder,
            "config_hash": self.config_hash,
        }


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


KNOWN_METRICS = ("fid", "clipi", "clipt", "lpips", "ilpips")


def evaluate_metrics(
    samples: torch.Tensor,
    references: torch.Tensor,
    metrics: list[str],
    embedder: Embedder,
    perceptual: PerceptualDistance | None = None,
    prompt: str | None = None,
) -> list[MetricReport]:
    """Compute the requested metric battery over sample/reference images."""
    unknown = [m for m in metrics if m not in KNOWN_METRICS]
    if unknown:
        raise InvalidInputError(f"unknown metrics {unknown}; choose from {KNOWN_METRICS}")
    if perceptual is None:
        perceptual = PerceptualDistance()
    reports = []
    base = {"embedder": embedder.name, "n": samples.shape[0], "m": references.shape[0]}
    emb_s = emb_r = None
    if {"fid", "clipi"} & set(metrics):
        emb_s = embedder.embed_images(samples)
        emb_r = embedder.embed_images(references)
    for metric in metrics:
        if metric == "fid":
            value = frechet_distance(emb_s, emb_r)
        elif metric == "clipi":
            value = pairwise_similarity_score(emb_s, emb_r)
        elif metric == "clipt":
            if prompt is None:
                raise InvalidInputError("clipt requires a prompt")
            value = text_image_score(samples, prompt, embedder)
        elif metric == "lpips":
            if samples.shape[0] == references.shape[0]:
                pairs = zip(range(samples.shape[0]), range(references.shape[0]))
            else:
                pairs = ((i, j) for i in range(samples.shape[0]) for j in range(references.shape[0]))
            value = float(np.mean([
                perceptual(samples[i : i + 1], references[j : j + 1]) for i, j in pairs
            ]))
        else:
            value = intra_cluster_lpips(
                samples, references,
                distance=lambda a, b: perceptual(a.unsqueeze(0), b.unsqueeze(0)),
            )
        reports.append(
            MetricReport(
                metric=metric,
                value=value,
                n_samples=samples.shape[0],
                n_references=references.shape[0],
                embedder=embedder.name,
                config_hash=_config_hash({**base, "metric": metric, "prompt": prompt}),
            )
        )
    return reports


def write_reports(reports: list[MetricReport], csv_path, json_path) -> None:
    import csv
    from pathlib import Path

    csv_path, json_path = Path(csv_path), Path(json_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(reports[0].to_dict()))
        writer.writeheader()
        for report in reports:
            writer.writerow(report.to_dict())
    json_path.write_text(json.dumps([r.to_dict() for r in reports], indent=2))
