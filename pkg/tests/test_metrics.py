import itertools
import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tristyle.errors import InvalidInputError, UndefinedMetricError
from tristyle.metrics import (
    BottleneckEmbedder,
    Embedder,
    HistogramJointEmbedder,
    PerceptualDistance,
    evaluate_metrics,
    frechet_distance,
    intra_cluster_lpips,
    pairwise_similarity_score,
    text_image_score,
    write_reports,
)


# -- Frechet distance --------------------------------------------------------


def test_frechet_self_distance_zero():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 6))
    assert abs(frechet_distance(x, x)) < 1e-6


def test_frechet_symmetry():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 5))
    y = rng.normal(size=(280, 5)) * 1.5 + 0.3
    assert frechet_distance(x, y) == pytest.approx(frechet_distance(y, x), abs=1e-9)


def test_frechet_equal_covariance_gaussians_give_squared_mean_distance():
    # Closed form: equal covariances cancel, distance is ||mu_a - mu_b||^2 = d^2.
    rng = np.random.default_rng(2)
    d = 3.0
    base = rng.normal(size=(10000, 4))
    shifted = rng.normal(size=(10000, 4))
    shifted[:, 0] += d
    value = frechet_distance(base, shifted)
    assert value == pytest.approx(d * d, rel=0.05)


def test_frechet_monotone_under_mean_translation():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2000, 4))
    values = []
    for shift in (0.5, 1.0, 2.0, 4.0):
        y = x + np.array([shift, 0, 0, 0])
        values.append(frechet_distance(x, y))
    assert all(a < b for a, b in zip(values, values[1:]))


def test_frechet_warns_below_dim_plus_one():
    rng = np.random.default_rng(4)
    with pytest.warns(UserWarning, match="dim"):
        frechet_distance(rng.normal(size=(5, 8)), rng.normal(size=(5, 8)))


def test_frechet_input_validation():
    with pytest.raises(InvalidInputError):
        frechet_distance(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(InvalidInputError):
        frechet_distance(np.zeros((1, 2)), np.zeros((3, 2)))


# -- similarity scores -------------------------------------------------------


def test_similarity_identical_sets_is_one():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 8))
    assert pairwise_similarity_score(x, x.copy()) <= 1.0 + 1e-12
    same = np.tile(rng.normal(size=(1, 8)), (3, 1))
    assert pairwise_similarity_score(same, same) == pytest.approx(1.0)


def test_similarity_orthogonal_sets_is_zero():
    a = np.array([[1.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 1.0], [0.0, 2.0]])
    assert pairwise_similarity_score(a, b) == pytest.approx(0.0)


def test_similarity_matches_hand_built_oracle():
    samples = np.array([[1.0, 0.0], [1.0, 1.0]])
    refs = np.array([[0.0, 1.0], [2.0, 0.0]])
    total = 0.0
    for s, r in itertools.product(samples, refs):
        total += float(s @ r / (np.linalg.norm(s) * np.linalg.norm(r)))
    assert pairwise_similarity_score(samples, refs) == pytest.approx(total / 4)


def test_similarity_zero_norm_names_the_sample():
    samples = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(InvalidInputError, match="index 1"):
        pairwise_similarity_score(samples, np.eye(2))


def test_similarity_permutation_invariant():
    rng = np.random.default_rng(5)
    s, r = rng.normal(size=(6, 4)), rng.normal(size=(5, 4))
    perm = rng.permutation(6)
    assert pairwise_similarity_score(s, r) == pytest.approx(
        pairwise_similarity_score(s[perm], r), abs=1e-12
    )


# -- text-image score --------------------------------------------------------


class _StubJointEmbedder(Embedder):
    """Prompt embedding equals the mean image embedding."""

    name = "stub-joint"
    dim = 4
    modality = "image+text"

    def embed_images(self, images):
        flat = images.reshape(images.shape[0], -1)
        return flat[:, : self.dim].double().numpy()

    def embed_texts(self, prompts):
        return np.tile(self._mean, (len(prompts), 1))


def test_text_image_score_stub_equals_cosine_to_mean():
    images = torch.randn(5, 1, 2, 2, dtype=torch.float64)
    emb = _StubJointEmbedder()
    vecs = emb.embed_images(images)
    emb._mean = vecs.mean(axis=0, keepdims=True)
    expected = np.mean([
        v @ emb._mean[0] / (np.linalg.norm(v) * np.linalg.norm(emb._mean[0]))
        for v in vecs
    ])
    assert text_image_score(images, "anything", emb) == pytest.approx(expected)


def test_text_image_score_validation():
    emb = BottleneckEmbedder.__new__(BottleneckEmbedder)  # image-only modality
    emb.name = "img-only"
    with pytest.raises(InvalidInputError):
        text_image_score(torch.zeros(1, 3, 4, 4), "x", emb)
    joint = HistogramJointEmbedder()
    with pytest.raises(InvalidInputError):
        text_image_score(torch.zeros(0, 3, 4, 4), "x", joint)


def test_text_image_score_duplication_invariant():
    joint = HistogramJointEmbedder()
    imgs = torch.rand(3, 3, 8, 8, generator=torch.Generator().manual_seed(0))
    single = text_image_score(imgs, "a red house", joint)
    doubled = text_image_score(torch.cat([imgs, imgs]), "a red house", joint)
    assert doubled == pytest.approx(single, abs=1e-12)


def test_histogram_embedder_ranks_red_images_for_red_prompt():
    joint = HistogramJointEmbedder()
    red = torch.zeros(2, 3, 8, 8)
    red[:, 0] = 0.9
    blue = torch.zeros(2, 3, 8, 8)
    blue[:, 2] = 0.9
    assert text_image_score(red, "a red house", joint) > text_image_score(blue, "a red house", joint)


# -- perceptual distance -----------------------------------------------------


def test_perceptual_identity_and_symmetry():
    perc = PerceptualDistance()
    gen = torch.Generator().manual_seed(0)
    a = torch.rand(1, 3, 16, 16, generator=gen)
    b = torch.rand(1, 3, 16, 16, generator=gen)
    assert perc(a, a.clone()) == 0.0
    assert perc(a, b) == pytest.approx(perc(b, a), abs=1e-9)
    assert perc(a, b) > 0


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_perceptual_monotone_in_corruption(seed):
    perc = PerceptualDistance()
    gen = torch.Generator().manual_seed(seed)
    img = torch.rand(1, 3, 16, 16, generator=gen)
    noise = torch.randn(1, 3, 16, 16, generator=gen)
    d10 = perc(img, (img + 0.1 * noise).clamp(0, 1))
    d50 = perc(img, (img + 0.5 * noise).clamp(0, 1))
    assert d50 > d10


def test_perceptual_resolution_mismatch():
    perc = PerceptualDistance()
    with pytest.raises(InvalidInputError):
        perc(torch.zeros(1, 3, 16, 16), torch.zeros(1, 3, 8, 8))


# -- intra-cluster diversity -------------------------------------------------


def _dist_from_table(table):
    def d(a, b):
        return table[(int(a), int(b))]

    return d


def exhaustive_intra_cluster(samples, references, distance):
    assign = {}
    for i in samples:
        best = min(references, key=lambda j: distance(i, j))
        assign.setdefault(best, []).append(i)
    means = []
    for members in assign.values():
        if len(members) < 2:
            continue
        pairs = list(itertools.combinations(members, 2))
        means.append(np.mean([distance(p, q) for p, q in pairs]))
    return float(np.mean(means))


def test_intra_cluster_matches_exhaustive_oracle():
    # 4 samples (ids 0..3), 2 references (ids 10, 11), hand-built distances
    table = {}
    rng = np.random.default_rng(7)
    for i in range(4):
        for j in (10, 11):
            table[(i, j)] = float(rng.uniform(0.1, 1.0))
        for j in range(4):
            table[(i, j)] = float(abs(i - j)) * 0.3
    d = _dist_from_table(table)
    samples = torch.arange(4).reshape(4, 1)
    refs = torch.tensor([10, 11]).reshape(2, 1)
    got = intra_cluster_lpips(samples, refs, distance=lambda a, b: d(a.item(), b.item()))
    want = exhaustive_intra_cluster(range(4), (10, 11), d)
    assert got == pytest.approx(want)


def test_intra_cluster_all_identical_is_zero():
    samples = torch.zeros(4, 1)
    refs = torch.zeros(2, 1) + torch.tensor([[0.0], [10.0]])
    value = intra_cluster_lpips(samples, refs, distance=lambda a, b: float((a - b).abs()))
    assert value == 0.0


def test_intra_cluster_two_identical_pairs_is_zero():
    samples = torch.tensor([[0.0], [0.0], [10.0], [10.0]])
    refs = torch.tensor([[0.0], [10.0]])
    value = intra_cluster_lpips(samples, refs, distance=lambda a, b: float((a - b).abs()))
    assert value == 0.0


def test_intra_cluster_all_singletons_undefined():
    samples = torch.tensor([[0.0], [10.0]])
    refs = torch.tensor([[0.0], [10.0]])
    with pytest.raises(UndefinedMetricError):
        intra_cluster_lpips(samples, refs, distance=lambda a, b: float((a - b).abs()))


# -- harness ------------------------------------------------------------------


def test_evaluate_metrics_reports_and_reproducibility(tmp_path):
    gen = torch.Generator().manual_seed(0)
    samples = torch.rand(6, 3, 16, 16, generator=gen)
    refs = torch.rand(6, 3, 16, 16, generator=gen)
    emb = HistogramJointEmbedder()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r1 = evaluate_metrics(samples, refs, ["fid", "clipi", "lpips", "clipt"], emb, prompt="a red house")
        r2 = evaluate_metrics(samples, refs, ["fid", "clipi", "lpips", "clipt"], emb, prompt="a red house")
    assert [x.value for x in r1] == [x.value for x in r2]
    write_reports(r1, tmp_path / "m.csv", tmp_path / "m.json")
    assert (tmp_path / "m.csv").exists() and (tmp_path / "m.json").exists()
    with pytest.raises(InvalidInputError):
        evaluate_metrics(samples, refs, ["nope"], emb)
    with pytest.raises(InvalidInputError):
        evaluate_metrics(samples, refs, ["clipt"], emb)  # prompt required
