import json

import pytest
from fastapi.testclient import TestClient

from conftest import RAIL_PASSAGES, make_eid_entry
from worldline.evaluation import save_eid
from worldline.knowledge import AccidentRecord, build_index
from worldline.orchestrator import Orchestrator, SessionStore
from worldline.providers import MockProvider
from worldline.server import build_app

INITIAL = "A waste bin on the subway platform caught fire, emitting thick smoke."


@pytest.fixture
def client(tmp_path):
    orchestrator = Orchestrator(
        SessionStore(tmp_path / "store"),
        MockProvider(seed=0),
        index=build_index(RAIL_PASSAGES),
        accidents=[AccidentRecord(f"a{i}", "road", f"fuel truck fire case {i}") for i in range(3)],
        clock=iter(range(1, 10_000)).__next__,
    )
    return TestClient(build_app(orchestrator))


def drive_to_finalized(client):
    session = client.post("/sessions", json={"initial": INITIAL}).json()
    sid = session["session_id"]
    for _ in range(3):
        candidates = client.post(f"/sessions/{sid}/expand").json()["candidates"]
        session = client.post(f"/sessions/{sid}/select", json={"node_id": candidates[0]["id"]}).json()
    return sid, session


class TestSessionEndpoints:
    def test_create_and_fetch(self, client):
        created = client.post("/sessions", json={"initial": INITIAL})
        assert created.status_code == 200
        sid = created.json()["session_id"]
        fetched = client.get(f"/sessions/{sid}")
        assert fetched.json() == created.json()

    def test_create_empty_initial_is_400(self, client):
        response = client.post("/sessions", json={"initial": " "})
        assert response.status_code == 400
        assert response.json()["code"] == "invalid-argument"

    def test_unknown_session_is_404(self, client):
        response = client.get("/sessions/ghost")
        assert response.status_code == 404
        assert response.json()["code"] == "not-found"

    def test_expand_returns_candidates(self, client):
        sid = client.post("/sessions", json={"initial": INITIAL}).json()["session_id"]
        response = client.post(f"/sessions/{sid}/expand")
        assert response.status_code == 200
        candidates = response.json()["candidates"]
        assert len(candidates) == 3
        listed = client.get(f"/sessions/{sid}/candidates").json()["candidates"]
        assert [c["id"] for c in listed] == [c["id"] for c in candidates]

    def test_select_bad_candidate_is_400(self, client):
        sid = client.post("/sessions", json={"initial": INITIAL}).json()["session_id"]
        client.post(f"/sessions/{sid}/expand")
        response = client.post(f"/sessions/{sid}/select", json={"node_id": "n9999"})
        assert response.status_code == 400

    def test_select_without_expand_is_409(self, client):
        sid = client.post("/sessions", json={"initial": INITIAL}).json()["session_id"]
        response = client.post(f"/sessions/{sid}/select", json={"node_id": "n0001"})
        assert response.status_code == 409
        assert response.json()["code"] == "illegal-state"

    def test_full_run_and_finalize_conflict(self, client):
        sid, session = drive_to_finalized(client)
        assert session["state"] == "finalized"
        assert session["metrics"] == {"fc": 1.0, "lc": 1.0}
        again = client.post(f"/sessions/{sid}/finalize")
        assert again.status_code == 409

    def test_expand_past_depth_maps_to_409(self, client):
        sid, _ = drive_to_finalized(client)
        response = client.post(f"/sessions/{sid}/expand")
        assert response.status_code == 409

    def test_config_override(self, client):
        payload = {"initial": INITIAL, "config": {"branch_count": 2, "temperatures": [0.4, 1.0]}}
        sid = client.post("/sessions", json=payload).json()["session_id"]
        candidates = client.post(f"/sessions/{sid}/expand").json()["candidates"]
        assert len(candidates) == 2

    def test_invalid_config_is_400(self, client):
        payload = {"initial": INITIAL, "config": {"branch_count": 0}}
        assert client.post("/sessions", json=payload).status_code == 400


class TestArtifactEndpoints:
    def test_visualization_and_media(self, client):
        sid, session = drive_to_finalized(client)
        viz = client.get(f"/sessions/{sid}/visualization").json()
        assert len(viz["pairs"]) == 4
        keyframes = viz["keyframes"]
        assert keyframes
        media = client.get(keyframes[0]["url"])
        assert media.status_code == 200
        assert media.content.startswith(b"\x89PNG")

    def test_visualization_before_finalize_is_404(self, client):
        sid = client.post("/sessions", json={"initial": INITIAL}).json()["session_id"]
        assert client.get(f"/sessions/{sid}/visualization").status_code == 404

    def test_graph_endpoint(self, client):
        sid, _ = drive_to_finalized(client)
        graph = client.get(f"/sessions/{sid}/graph").json()
        assert "nodes" in graph and "edges" in graph
        assert graph["dot"].startswith("digraph")

    def test_estimates_endpoint(self, client):
        sid, _ = drive_to_finalized(client)
        estimates = client.get(f"/sessions/{sid}/estimates").json()["estimates"]
        assert len(estimates) == 7
        assert all(e["label"] == "model-estimated" for e in estimates)

    def test_missing_media_is_404(self, client):
        sid, _ = drive_to_finalized(client)
        assert client.get(f"/sessions/{sid}/media/nope").status_code == 404


class TestTransformEndpoint:
    def test_transform(self, client):
        response = client.post("/transform", json={"domain": "urban_rail_transit", "n": 2})
        assert response.status_code == 200
        instances = response.json()["instances"]
        assert len(instances) == 2
        assert all(i["domain"] == "urban_rail_transit" for i in instances)
        assert all(i["provenance"] for i in instances)

    def test_transform_needs_domain(self, client):
        assert client.post("/transform", json={"n": 1}).status_code == 400


class TestEvalEndpoint:
    def test_eval_round(self, client, tmp_path):
        dataset = tmp_path / "bench.jsonl"
        save_eid([make_eid_entry("e1")], dataset)
        response = client.post("/eval", json={"dataset_path": str(dataset), "backend": "raw"})
        assert response.status_code == 200
        report = response.json()
        assert set(report) >= {"fc", "lc", "accuracy", "per_entry", "provider_call_count"}
        assert len(report["per_entry"]) == 1

    def test_eval_unknown_dataset_is_404(self, client):
        assert client.post("/eval", json={"dataset_path": "/nope.jsonl"}).status_code == 404

    def test_eval_unknown_backend_is_400(self, client, tmp_path):
        dataset = tmp_path / "bench.jsonl"
        save_eid([make_eid_entry("e1")], dataset)
        response = client.post("/eval", json={"dataset_path": str(dataset), "backend": "quantum"})
        assert response.status_code == 400


class TestProviderErrorMapping:
    def test_provider_error_maps_to_502(self, tmp_path):
        provider = MockProvider(script=[{"capability": "generate", "reply": ""}])
        orchestrator = Orchestrator(SessionStore(tmp_path / "store"), provider)
        client = TestClient(build_app(orchestrator))
        sid = client.post("/sessions", json={"initial": INITIAL}).json()["session_id"]
        response = client.post(f"/sessions/{sid}/expand")
        assert response.status_code == 502
        assert response.json()["code"] == "provider-error"


class TestStaticUi:
    def test_ui_mounted_when_directory_exists(self, tmp_path):
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>worldline ui</body></html>")
        orchestrator = Orchestrator(SessionStore(tmp_path / "store"), MockProvider())
        client = TestClient(build_app(orchestrator, ui_dir=ui))
        response = client.get("/")
        assert response.status_code == 200
        assert "worldline ui" in response.text
