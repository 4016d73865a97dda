import json

import pytest
import torch

from tristyle.captions import (
    CaptionPair,
    HttpCaptioner,
    HttpLlm,
    MockCaptioner,
    MockLlm,
    PairStore,
    RuleLlm,
    STRIP_INSTRUCTION_V1,
    StyleLexicon,
    build_training_pair,
    caption,
    strip_style,
    strip_style_tokens,
)
from tristyle.data import image_hash, save_image
from tristyle.errors import (
    DegenerateCaptionError,
    InvalidInputError,
    StateError,
    TransportError,
)

FIXTURE_CAPTION = "a blue house beside a tree, oil painting style"


@pytest.fixture()
def fixture_image(tmp_path):
    img = torch.zeros(3, 8, 8)
    img[2] = 0.8  # a blue square, close enough for a fixture
    path = tmp_path / "fixture_a.png"
    save_image(img, path)
    return path


@pytest.fixture()
def mock_captioner(fixture_image):
    return MockCaptioner(fixtures={image_hash(fixture_image): FIXTURE_CAPTION})


def test_mock_captioner_fixture_and_determinism(fixture_image, mock_captioner):
    assert caption(fixture_image, mock_captioner) == FIXTURE_CAPTION
    assert caption(fixture_image, mock_captioner) == FIXTURE_CAPTION


def test_mock_captioner_unknown_image_is_hash_deterministic(tmp_path):
    img = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(5))
    path = tmp_path / "other.png"
    save_image(img, path)
    captioner = MockCaptioner()
    first = caption(path, captioner)
    assert first == caption(path, captioner)
    assert first.strip()


def test_caption_unreadable_file(tmp_path):
    bad = tmp_path / "not_an_image.png"
    bad.write_text("hello")
    with pytest.raises(InvalidInputError):
        caption(bad, MockCaptioner())
    with pytest.raises(InvalidInputError):
        caption(tmp_path / "missing.png", MockCaptioner())


def test_strip_style_rule_fallback_deletes_lexicon_phrase():
    assert strip_style(FIXTURE_CAPTION) == "a blue house beside a tree"


def test_strip_style_fixed_point_without_style_tokens():
    assert strip_style("a blue house beside a tree") == "a blue house beside a tree"


def test_strip_style_degenerate_caption():
    with pytest.raises(DegenerateCaptionError):
        strip_style("van gogh style swirling brushstrokes")


def test_strip_style_empty_caption_rejected():
    with pytest.raises(InvalidInputError):
        strip_style("   ")


def test_strip_style_reprompts_once_then_errors():
    # First response still has a lexicon token; second is clean.
    llm = MockLlm(["a house painting", "a house"])
    assert strip_style("a house, oil painting", llm) == "a house"
    assert llm.calls == 2
    llm = MockLlm(["a house painting", "a house painting"])
    with pytest.raises(StateError, match="painting"):
        strip_style("a house, oil painting", llm)


def test_lexicon_versioned_and_loaded():
    lexicon = StyleLexicon.load()
    assert lexicon.version == "1"
    assert "painting" in lexicon.words
    assert ("van", "gogh") in [p for p in lexicon.phrases if len(p) == 2]


def test_build_training_pair_end_to_end(tmp_path, fixture_image, mock_captioner):
    store = PairStore(tmp_path / "pairs.jsonl")
    pair = build_training_pair(fixture_image, mock_captioner, store=store)
    assert pair.t_clip == FIXTURE_CAPTION
    assert pair.t_wo_style == "a blue house beside a tree"
    assert pair.provenance == {
        "captioner_id": MockCaptioner.id,
        "llm_id": RuleLlm.id,
    }


def test_build_training_pair_idempotent(tmp_path, fixture_image, mock_captioner):
    store_path = tmp_path / "pairs.jsonl"
    store = PairStore(store_path)
    build_training_pair(fixture_image, mock_captioner, store=store)
    build_training_pair(fixture_image, mock_captioner, store=store)
    lines = store_path.read_text().splitlines()
    assert len(lines) == 1
    # a fresh store instance sees the same single pair
    again = PairStore(store_path)
    assert len(again.all()) == 1


def test_build_training_pair_batch_order_independent(tmp_path):
    paths = []
    for i in range(3):
        img = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(i))
        p = tmp_path / f"img{i}.png"
        save_image(img, p)
        paths.append(p)
    store_a = PairStore(tmp_path / "a.jsonl")
    store_b = PairStore(tmp_path / "b.jsonl")
    pairs_fwd = [build_training_pair(p, store=store_a) for p in paths]
    pairs_rev = [build_training_pair(p, store=store_b) for p in reversed(paths)]
    assert {p.image_hash for p in pairs_fwd} == {p.image_hash for p in pairs_rev}
    assert len(pairs_fwd) == 3


def test_lexicon_soundness_and_order_preservation_over_corpus(tmp_path):
    """No lexicon token survives; content tokens keep their order."""
    lexicon = StyleLexicon.load()
    captioner = MockCaptioner()
    store = PairStore(tmp_path / "pairs.jsonl")
    for i in range(12):
        img = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(100 + i))
        path = tmp_path / f"c{i}.png"
        save_image(img, path)
        pair = build_training_pair(path, captioner, store=store)
        out_tokens = pair.t_wo_style.split()
        assert not lexicon.tokens_in(out_tokens)
        src = iter(pair.t_clip.lower().replace(",", " ").split())
        assert all(tok in src for tok in out_tokens)


def test_offline_path_byte_identical_across_runs(tmp_path):
    img = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(9))
    path = tmp_path / "img.png"
    save_image(img, path)
    a = build_training_pair(path, store=PairStore(tmp_path / "a.jsonl"))
    b = build_training_pair(path, store=PairStore(tmp_path / "b.jsonl"))
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_caption_pair_validation_catches_leftover_style_token():
    lexicon = StyleLexicon.load()
    bad = CaptionPair(
        t_clip="a house painting",
        t_wo_style="a house painting",
        provenance={"captioner_id": "x", "llm_id": "y"},
        image_ref="img.png",
        image_hash="00",
    )
    with pytest.raises(StateError):
        bad.validate(lexicon)


# -- HTTP clients against a local app ----------------------------------------


def _toy_server():
    from fastapi import FastAPI

    app = FastAPI()

    @app.post("/caption")
    def cap(body: dict):
        return {"caption": "a red house, watercolor painting"}

    @app.post("/edit")
    def edit(body: dict):
        return {"text": strip_style_tokens(body["text"], StyleLexicon.load())}

    return app


def test_http_clients_round_trip(tmp_path, fixture_image):
    from fastapi.testclient import TestClient

    client = TestClient(_toy_server())
    captioner = HttpCaptioner("http://testserver", client=client)
    assert captioner.caption_image(fixture_image) == "a red house, watercolor painting"
    llm = HttpLlm("http://testserver", client=client)
    assert llm.edit("a red house, watercolor painting", STRIP_INSTRUCTION_V1) == "a red house"


def test_http_client_unavailable_raises_transport_error(fixture_image):
    import httpx

    def boom(request):
        raise httpx.ConnectError("refused", request=request)

    client = httpx.Client(transport=httpx.MockTransport(boom))
    captioner = HttpCaptioner("http://down.test", client=client)
    with pytest.raises(TransportError) as err:
        captioner.caption_image(fixture_image)
    assert err.value.retryable is True
    llm = HttpLlm("http://down.test", client=client)
    with pytest.raises(TransportError):
        llm.edit("text", "instr")
