import pytest
from fastapi.testclient import TestClient

from gda_stream.drift import (format_spec_text, generate,
                              rotation_benchmark_spec)
from gda_stream.pipeline import PipelineConfig, run_stream
from gda_stream.service import create_app
from gda_stream.workflows import simulate_to_dir


@pytest.fixture()
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def stream():
    spec = rotation_benchmark_spec(seed=0, domains=4, batches_per_domain=2,
                                   batch_size=192, total_degrees=20.0,
                                   kl_budget=0.6)
    return generate(spec)


def proto_payload(protos):
    return {"matrix": protos.prototypes.tolist(),
            "class_names": list(protos.class_names),
            "temperature": protos.temperature}


def test_healthz(client):
    assert client.get("/healthz").json() == {"status": "ok"}


class TestSessionFlow:
    def test_session_predictions_match_local_run(self, client, stream):
        batches, protos, _ = stream
        created = client.post("/v1/sessions",
                              json={"prototypes": proto_payload(protos)})
        assert created.status_code == 200
        sid = created.json()["session_id"]
        assert created.json()["n_classes"] == protos.n_classes

        remote_preds = []
        for batch in batches:
            resp = client.post(f"/v1/sessions/{sid}/batches", json={
                "features": batch.features.tolist(),
                "domain_id": batch.domain_id,
                "labels": [int(x) for x in batch.labels]})
            assert resp.status_code == 200
            remote_preds.extend(resp.json()["predictions"])

        local = run_stream(batches, protos, PipelineConfig())
        assert remote_preds == [r.prediction for r in local.records]

        state = client.get(f"/v1/sessions/{sid}").json()
        assert state["steps"] == len(batches)
        assert state["covariance_mode"] == "homogeneous"
        assert "homogeneity.decision=" in state["homogeneity"]

        summary = client.get(f"/v1/sessions/{sid}/summary").json()
        assert summary["weighted_accuracy"] == pytest.approx(
            local.summary.weighted_accuracy)

        assert client.delete(f"/v1/sessions/{sid}").status_code == 200
        assert client.get(f"/v1/sessions/{sid}").status_code == 404

    def test_unknown_session_404(self, client):
        assert client.post("/v1/sessions/nope/batches",
                           json={"features": [[1.0]]}).status_code == 404

    def test_bad_batch_rejected(self, client, stream):
        _, protos, _ = stream
        sid = client.post("/v1/sessions",
                          json={"prototypes": proto_payload(protos)}).json()["session_id"]
        resp = client.post(f"/v1/sessions/{sid}/batches",
                           json={"features": [[1.0, 2.0]],
                                 "labels": [0, 1]})
        assert resp.status_code == 400

    def test_bad_config_rejected(self, client, stream):
        _, protos, _ = stream
        resp = client.post("/v1/sessions", json={
            "prototypes": proto_payload(protos),
            "config": {"alpha": -1.0}})
        assert resp.status_code == 422


class TestRunEndpoint:
    def test_run_matches_local(self, client, tmp_path, stream):
        batches, protos, _ = stream
        spec = rotation_benchmark_spec(seed=0, domains=4, batches_per_domain=2,
                                       batch_size=192, total_degrees=20.0,
                                       kl_budget=0.6)
        stream_dir = tmp_path / "stream"
        simulate_to_dir(spec, stream_dir)
        resp = client.post("/v1/runs", json={"stream_dir": str(stream_dir)})
        assert resp.status_code == 200
        local = run_stream(batches, protos, PipelineConfig())
        assert resp.json()["summary"]["weighted_accuracy"] == pytest.approx(
            local.summary.weighted_accuracy)

    def test_run_writes_artifacts(self, client, tmp_path):
        spec = rotation_benchmark_spec(seed=2, domains=3, batches_per_domain=1,
                                       batch_size=32, total_degrees=10.0,
                                       kl_budget=0.6)
        stream_dir = tmp_path / "stream"
        simulate_to_dir(spec, stream_dir)
        out_dir = tmp_path / "results"
        resp = client.post("/v1/runs", json={"stream_dir": str(stream_dir),
                                             "out_dir": str(out_dir)})
        assert resp.status_code == 200
        assert (out_dir / "predictions.csv").exists()

    def test_missing_stream_is_client_error(self, client):
        resp = client.post("/v1/runs", json={"stream_dir": "/nonexistent/xyz"})
        assert resp.status_code == 400


class TestSimulateEndpoint:
    def test_simulate_and_drift_check(self, client, tmp_path):
        spec = rotation_benchmark_spec(seed=3, domains=3, batches_per_domain=1,
                                       batch_size=32, total_degrees=10.0,
                                       kl_budget=0.6)
        out = tmp_path / "sim"
        resp = client.post("/v1/simulations", json={
            "spec_text": format_spec_text(spec, in_plane_mass=0.85),
            "out_dir": str(out)})
        assert resp.status_code == 200
        body = resp.json()
        assert body["n_domains"] == 3
        assert body["max_step_kl"] <= 0.6

        check = client.post("/v1/drift-checks", json={"stream_dir": str(out),
                                                      "budget": 0.6})
        assert check.status_code == 200
        assert check.json()["passed"] is True

        check = client.post("/v1/drift-checks", json={"stream_dir": str(out),
                                                      "budget": 1e-12})
        assert check.json()["passed"] is False
        assert check.json()["offending_step"] is not None

    def test_infeasible_spec_rejected(self, client, tmp_path):
        spec_text = format_spec_text(
            rotation_benchmark_spec(seed=0, domains=2, total_degrees=80.0,
                                    kl_budget=0.5), in_plane_mass=0.85)
        resp = client.post("/v1/simulations", json={
            "spec_text": spec_text, "out_dir": str(tmp_path / "x")})
        assert resp.status_code == 422


class TestThinClient:
    def test_cli_server_mode_matches_local(self, tmp_path, monkeypatch):
        import httpx
        from click.testing import CliRunner

        from gda_stream.cli import main

        spec = rotation_benchmark_spec(seed=4, domains=3, batches_per_domain=2,
                                       batch_size=32, total_degrees=10.0,
                                       kl_budget=0.6)
        stream_dir = tmp_path / "stream"
        simulate_to_dir(spec, stream_dir)

        app = create_app()

        def fake_client(base_url, timeout):
            return TestClient(app, base_url=base_url)

        monkeypatch.setattr(httpx, "Client", fake_client)
        runner = CliRunner()
        out_remote = tmp_path / "remote"
        result = runner.invoke(main, ["run", "--stream", str(stream_dir),
                                      "--server", "http://testserver",
                                      "--out", str(out_remote)])
        assert result.exit_code == 0, result.output

        out_local = tmp_path / "local"
        result = runner.invoke(main, ["run", "--stream", str(stream_dir),
                                      "--out", str(out_local)])
        assert result.exit_code == 0, result.output
        assert (out_remote / "predictions.csv").read_bytes() == \
            (out_local / "predictions.csv").read_bytes()
