"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  The heavy criteria share the session-scoped trained models from
conftest.
"""

import math
from contextlib import contextmanager

import numpy as np
import pytest
import torch
from scipy import stats

from tristyle.attention import InjectionPolicy, fuse_queries, styled_attention
from tristyle.curation import SessionStore
from tristyle.data import (
    apply_style_transform,
    generate_scene_dataset,
    save_image,
)
from tristyle.ddim import ddim_invert, ddim_sample
from tristyle.errors import QuotaError, StateError
from tristyle.metrics import (
    BottleneckEmbedder,
    PerceptualDistance,
    frechet_distance,
    intra_cluster_lpips,
)
from tristyle.pipeline import (
    DiffusionStack,
    PipelineConfig,
    ddim_img2img,
    image_style_transfer,
)


@contextmanager
def report(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


def test_criterion_01_query_fusion_endpoints_and_linearity():
    with report("eq3-endpoints-linearity"):
        gen = torch.Generator().manual_seed(0)
        for _ in range(50):
            q_i = torch.randn(3, 8, generator=gen, dtype=torch.float64)
            q_s = torch.randn(3, 8, generator=gen, dtype=torch.float64)
            assert torch.equal(fuse_queries(q_i, q_s, 0.0), q_s)
            assert torch.equal(fuse_queries(q_i, q_s, 1.0), q_i)
            b1, b2 = torch.rand(2, generator=gen, dtype=torch.float64).tolist()
            lhs = fuse_queries(q_i, q_s, b1) + fuse_queries(q_i, q_s, b2)
            rhs = 2 * fuse_queries(q_i, q_s, (b1 + b2) / 2)
            assert (lhs - rhs).abs().max() < 1e-7


def test_criterion_02_styled_attention_matches_scalar_oracle():
    with report("eq4-oracle-equivalence"):
        rng = np.random.default_rng(42)
        for _ in range(100):
            nq, nk, d = (int(x) for x in rng.integers(1, 7, size=3))
            q = rng.normal(size=(nq, d))
            k = rng.normal(size=(nk, d))
            v = rng.normal(size=(nk, d))
            scale = 1.0 / math.sqrt(d)
            got = styled_attention(
                torch.tensor(q), torch.tensor(k), torch.tensor(v)
            ).numpy()
            want = np.zeros((nq, d))
            for i in range(nq):
                logits = np.array([
                    sum(q[i, a] * k[j, a] for a in range(d)) * scale for j in range(nk)
                ])
                w = np.exp(logits - logits.max())
                w /= w.sum()
                for j in range(nk):
                    want[i] += w[j] * v[j]
            assert np.abs(got - want).max() < 1e-6


def test_criterion_03_reduction_law_bit_identical(stack, zero_adapter, toy_dataset):
    with report("reduction-to-img2img"):
        images, _ = toy_dataset
        content = images[:2]
        zero_stack = DiffusionStack(
            stack.autoencoder, stack.denoiser, stack.schedule, adapter=zero_adapter
        )
        policy = InjectionPolicy(
            target_layers=stack.denoiser.decoder_attention_layers,
            swap_kv=False, fuse_query=False,
        )
        cfg = PipelineConfig(t_small=300, t_large=600, seed=17, policy=policy)
        result = image_style_transfer(zero_stack, content, cfg, "a house")
        baseline = ddim_img2img(zero_stack, content, 300, "a house", seed=17)
        assert torch.equal(result.output.data, baseline.data)


def test_criterion_04_ddim_round_trip(stack, toy_dataset):
    with report("ddim-round-trip"):
        images, _ = toy_dataset
        x0 = stack.autoencoder.encode(images[:20]).data
        cond = stack.denoiser.embed_prompt("")
        inverted, _ = ddim_invert(stack.denoiser, stack.schedule, x0, cond, num_steps=50)
        recovered, _ = ddim_sample(
            stack.denoiser, stack.schedule, inverted.data, stack.schedule.T, cond, num_steps=50
        )
        mae = float((recovered.data - x0).abs().mean())
        bound = 0.10 * float(x0.std())
        print(f"  round-trip MAE {mae:.4f} vs bound {bound:.4f}")
        assert mae < bound


def test_criterion_05_threshold_trend(stack, toy_dataset):
    with report("threshold-trend"):
        images, _ = toy_dataset
        content = images[:20]
        perceptual = PerceptualDistance(stack.autoencoder, stack.denoiser)
        thresholds = [200, 400, 600]  # {0.2, 0.4, 0.6} of the inference span
        xs, ys = [], []
        for t_small in thresholds:
            cfg = PipelineConfig(t_small=t_small, t_large=800, seed=9)
            result = image_style_transfer(stack, content, cfg, "")
            for i in range(content.shape[0]):
                xs.append(t_small)
                ys.append(
                    perceptual(result.output.data[i : i + 1], content[i : i + 1])
                )
        rho, p = stats.spearmanr(xs, ys, alternative="greater")
        print(f"  spearman rho={rho:.3f} p={p:.2e}")
        assert p < 0.05


def test_criterion_06_query_preservation(stack, toy_dataset):
    with report("query-preservation"):
        images, _ = toy_dataset
        content = images[:32]
        perceptual = PerceptualDistance(stack.autoencoder, stack.denoiser)
        dists = {}
        for beta in (0.0, 0.8):
            cfg = PipelineConfig(t_small=300, t_large=600, beta=beta, seed=9)
            result = image_style_transfer(stack, content, cfg, "")
            dists[beta] = np.array([
                perceptual(result.output.data[i : i + 1], content[i : i + 1])
                for i in range(content.shape[0])
            ])
        test = stats.wilcoxon(dists[0.8], dists[0.0], alternative="less")
        print(
            f"  content distance beta=0.8 {dists[0.8].mean():.5f} vs "
            f"beta=0.0 {dists[0.0].mean():.5f}, p={test.pvalue:.2e}"
        )
        assert dists[0.8].mean() < dists[0.0].mean()
        assert test.pvalue < 0.05


def test_criterion_07_staged_feedback_bookkeeping(tmp_path):
    with report("staged-hf-bookkeeping"):
        for quota, sizes in ((5, (1, 6, 11)), (50, (1, 51, 101))):
            root = tmp_path / f"quota{quota}"
            store = SessionStore(root / "store")
            ref = root / "ref.png"
            save_image(torch.rand(3, 4, 4, generator=torch.Generator().manual_seed(0)), ref)
            sid = f"s{quota}"
            store.create_session(ref, "a house", quota=quota, session_id=sid)
            datasets = [store._get(sid).dataset_for_stage(1)]
            for stage in (1, 2):
                records = []
                for i in range(quota + 3):
                    path = root / f"c{stage}-{i}.png"
                    save_image(torch.rand(3, 4, 4, generator=torch.Generator().manual_seed(i)), path)
                    records.append(
                        {"id": f"c-s{stage}-{i:03d}", "path": str(path), "seed": i, "stage": stage}
                    )
                store.add_candidates(sid, records)
                ids = [c["id"] for c in store.list_candidates(sid, page_size=100)["items"]]
                store.select(sid, ids[: quota - 1])
                with pytest.raises(StateError):
                    store.promote(sid)  # off quota: rejected
                store.select(sid, [ids[quota - 1]])
                with pytest.raises(QuotaError):
                    store.select(sid, [ids[quota]])  # over quota: rejected
                datasets.append(store.promote(sid))
            assert tuple(len(d.image_paths) for d in datasets) == sizes
            assert datasets[1].nests(datasets[0]) and datasets[2].nests(datasets[1])


def test_criterion_08_semantic_gap_soundness(tmp_path):
    with report("semantic-gap-soundness"):
        from tristyle.captions import MockCaptioner, PairStore, StyleLexicon, build_training_pair

        lexicon = StyleLexicon.load()
        captioner = MockCaptioner()
        store = PairStore(tmp_path / "pairs.jsonl")
        for i in range(20):
            img = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(1000 + i))
            path = tmp_path / f"img{i}.png"
            save_image(img, path)
            pair = build_training_pair(path, captioner, store=store, lexicon=lexicon)
            tokens = pair.t_wo_style.split()
            assert not lexicon.tokens_in(tokens), f"style token survived in '{pair.t_wo_style}'"
            source = iter(pair.t_clip.lower().replace(",", " ").split())
            assert all(tok in source for tok in tokens), "content order violated"


def test_criterion_09_metric_sanity():
    with report("metric-sanity"):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(500, 6))
        assert abs(frechet_distance(x, x)) < 1e-6
        d = 2.5
        a = rng.normal(size=(10000, 4))
        b = rng.normal(size=(10000, 4))
        b[:, 1] += d
        assert frechet_distance(a, b) == pytest.approx(d * d, rel=0.05)

        table = {}
        for i in range(4):
            for j in (10, 11):
                table[(i, j)] = float(rng.uniform(0.1, 1.0))
            for j in range(4):
                table[(i, j)] = abs(i - j) * 0.25
        samples = torch.arange(4.0).reshape(4, 1)
        refs = torch.tensor([[10.0], [11.0]])
        dist = lambda p, q: table[(int(p), int(q))]
        got = intra_cluster_lpips(samples, refs, distance=lambda a_, b_: dist(a_.item(), b_.item()))
        assign = {}
        for i in range(4):
            best = min((10, 11), key=lambda j: dist(i, j))
            assign.setdefault(best, []).append(i)
        cluster_means = [
            np.mean([dist(p, q) for ai, p in enumerate(m) for q in m[ai + 1 :]])
            for m in assign.values()
            if len(m) >= 2
        ]
        assert got == pytest.approx(float(np.mean(cluster_means)))


def test_criterion_10_end_to_end_toy_transfer(stack):
    with report("end-to-end-toy-transfer"):
        content, _ = generate_scene_dataset(20, seed=77)
        style_refs = apply_style_transform(generate_scene_dataset(24, seed=99)[0])
        embedder = BottleneckEmbedder(stack.autoencoder)
        style_emb = embedder.embed_images(style_refs)

        cfg = PipelineConfig(t_small=300, t_large=600, beta=0.6, seed=9)
        result = image_style_transfer(stack, content, cfg, "")
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # 20 samples < dim+1 by design here
            fid_transferred = frechet_distance(
                embedder.embed_images(result.output.data), style_emb
            )
            fid_untransferred = frechet_distance(embedder.embed_images(content), style_emb)
        print(f"  FID transferred {fid_transferred:.3f} < untransferred {fid_untransferred:.3f}")
        assert fid_transferred < fid_untransferred
