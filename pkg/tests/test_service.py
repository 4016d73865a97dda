import pytest
import torch
from fastapi.testclient import TestClient

from tristyle.curation import SessionStore
from tristyle.data import save_image
from tristyle.service import make_app


@pytest.fixture()
def client(tmp_path):
    store = SessionStore(tmp_path / "curation")
    ref = tmp_path / "ref.png"
    save_image(torch.rand(3, 4, 4), ref)
    app = make_app(store)
    client = TestClient(app)
    client.store = store
    client.ref_path = ref
    client.tmp_path = tmp_path
    return client


def _add_candidates(client, n, stage=1, prefix="cand"):
    records = []
    for i in range(n):
        path = client.tmp_path / f"{prefix}{i:03d}.png"
        save_image(torch.rand(3, 4, 4, generator=torch.Generator().manual_seed(i)), path)
        records.append({"id": f"{prefix}-s{stage}-{i:03d}", "path": str(path), "seed": i, "stage": stage})
    client.store.add_candidates("s1", records)
    return [r["id"] for r in records]


def _create_session(client, quota=5):
    resp = client.post(
        "/api/v1/sessions",
        json={"reference_image": str(client.ref_path), "reference_caption": "a house", "quota": quota, "session_id": "s1"},
    )
    assert resp.status_code == 201
    return resp.json()


def test_create_and_list_sessions(client):
    body = _create_session(client)
    assert body["id"] == "s1" and body["quota"] == 5 and body["current_stage"] == 1
    listing = client.get("/api/v1/sessions").json()
    assert [s["id"] for s in listing] == ["s1"]


def test_create_session_bad_reference_is_400(client):
    resp = client.post("/api/v1/sessions", json={"reference_image": "/nope.png"})
    assert resp.status_code == 400
    assert "error" in resp.json()


def test_candidates_pagination(client):
    _create_session(client)
    _add_candidates(client, 120)
    page0 = client.get("/api/v1/sessions/s1/candidates", params={"page": 0, "page_size": 50}).json()
    page2 = client.get("/api/v1/sessions/s1/candidates", params={"page": 2, "page_size": 50}).json()
    assert page0["total"] == 120 and page0["pages"] == 3
    assert len(page0["items"]) == 50 and len(page2["items"]) == 20
    assert set(i["id"] for i in page0["items"]).isdisjoint(i["id"] for i in page2["items"])


def test_select_deselect_and_quota_conflict(client):
    _create_session(client)
    ids = _add_candidates(client, 8)
    resp = client.post("/api/v1/sessions/s1/select", json={"ids": ids[:5]})
    assert resp.status_code == 200 and resp.json()["selected_count"] == 5
    resp = client.post("/api/v1/sessions/s1/select", json={"ids": [ids[5]]})
    assert resp.status_code == 409
    payload = resp.json()
    assert payload["current"] == 5 and payload["quota"] == 5
    resp = client.post("/api/v1/sessions/s1/deselect", json={"ids": [ids[0]]})
    assert resp.json()["selected_count"] == 4


def test_promote_flow_and_status(client):
    _create_session(client)
    ids = _add_candidates(client, 6)
    client.post("/api/v1/sessions/s1/select", json={"ids": ids[:5]})
    resp = client.post("/api/v1/sessions/s1/promote", json={"ids": []})
    assert resp.status_code == 200
    body = resp.json()
    assert body["stage"] == 2 and body["dataset_size"] == 6
    status = client.get("/api/v1/sessions/s1/status").json()
    assert status["current_stage"] == 2 and status["promoted_stages"] == [2]


def test_promote_off_quota_is_409(client):
    _create_session(client)
    ids = _add_candidates(client, 6)
    client.post("/api/v1/sessions/s1/select", json={"ids": ids[:3]})
    resp = client.post("/api/v1/sessions/s1/promote", json={"ids": []})
    assert resp.status_code == 409
    assert "exactly 5" in resp.json()["error"]


def test_image_bytes_served(client):
    _create_session(client)
    ids = _add_candidates(client, 1)
    resp = client.get(f"/api/v1/images/{ids[0]}")
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"
    ref = client.get("/api/v1/images/ref-s1")
    assert ref.status_code == 200


def test_unknown_ids_are_404(client):
    assert client.get("/api/v1/sessions/nope/status").status_code == 404
    assert client.get("/api/v1/images/nope").status_code == 404
