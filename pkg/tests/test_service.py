import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from labelqc.geo import cluster
from labelqc.model import init_bundle
from labelqc.pipeline import featurize_against_index, predict_bundle
from labelqc.service import ServiceState, create_app
from labelqc.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    labels, infra, truth = generate(SynthConfig(n_labels=400, seed=77))
    index, _ = cluster(labels, 10.0, city_id="synth-a")
    bundle = init_bundle(seed=0, version="svc-test")
    bundle.norm_mean = np.array([2.0, 1.0, 30.0, 8.0])
    bundle.norm_std = np.array([2.0, 1.2, 30.0, 8.0])
    feedback = tmp_path_factory.mktemp("svc") / "decisions.jsonl"
    state = ServiceState(
        bundle=bundle,
        infra=infra,
        index=index,
        threshold=0.5,
        bundle_bytes=len(bundle.save_bytes()),
        feedback_path=feedback,
    )
    client = TestClient(create_app(state))
    return client, labels, state


def _payload(lb, **over):
    body = {
        "id": lb.id,
        "label_type": lb.label_type.name,
        "lat": lb.position.lat,
        "lon": lb.position.lon,
        "severity": lb.severity,
        "tags": list(lb.tags),
        "description": lb.description,
        "zoom": lb.zoom,
        "heading": lb.heading,
        "pitch": lb.pitch,
        "way_type": lb.way_type,
        "user_id": lb.user_id,
        "city_id": lb.city_id,
    }
    body.update(over)
    return body


class TestInfer:
    def test_response_contract(self, service):
        client, labels, state = service
        r = client.post("/v1/infer", json=_payload(labels[0]))
        assert r.status_code == 200
        body = r.json()
        assert 0.0 <= body["p_correct"] <= 1.0
        assert body["flagged"] == (body["p_correct"] < 0.5)
        assert body["model_version"] == "svc-test"
        assert body["timing"]["prep_ms"] >= 0.0
        assert body["timing"]["infer_ms"] >= 0.0

    def test_identical_requests_identical_scores(self, service):
        client, labels, _ = service
        a = client.post("/v1/infer", json=_payload(labels[1])).json()
        b = client.post("/v1/infer", json=_payload(labels[1])).json()
        assert a["p_correct"] == b["p_correct"]

    def test_matches_offline_featurizer(self, service):
        client, labels, state = service
        for lb in labels[:10]:
            got = client.post("/v1/infer", json=_payload(lb)).json()["p_correct"]
            feats = featurize_against_index([lb], state.infra, state.index)
            expected = float(predict_bundle(state.bundle, feats)[0])
            assert got == pytest.approx(expected, abs=1e-12)

    def test_severity_seven_schema_violation(self, service):
        client, labels, _ = service
        r = client.post("/v1/infer", json=_payload(labels[0], severity=7))
        assert r.status_code == 400

    def test_unknown_field_rejected(self, service):
        client, labels, _ = service
        r = client.post("/v1/infer", json=_payload(labels[0], surprise=1))
        assert r.status_code == 400

    def test_unknown_city(self, service):
        client, labels, _ = service
        r = client.post("/v1/infer", json=_payload(labels[0], city_id="atlantis"))
        assert r.status_code == 400
        assert "atlantis" in r.json()["detail"]

    def test_unknown_label_type(self, service):
        client, labels, _ = service
        r = client.post("/v1/infer", json=_payload(labels[0], label_type="Pothole"))
        assert r.status_code == 400

    def test_before_load_503(self):
        client = TestClient(create_app(None))
        assert client.get("/v1/model").status_code == 503
        assert client.post("/v1/feedback", json={"label_id": "x", "action": "keep"}).status_code == 503


class TestModelEndpoint:
    def test_metadata(self, service):
        client, _, state = service
        r = client.get("/v1/model")
        assert r.status_code == 200
        body = r.json()
        assert body["version"] == "svc-test"
        assert body["bundle_size_bytes"] == state.bundle_bytes
        assert body["bundle_size_bytes"] <= 131_072
        assert body["threshold"] == 0.5
        assert [f["name"] for f in body["schema"]["features"]][:2] == ["severity_value", "zoom"]


class TestFeedback:
    def test_keep_logged(self, service):
        client, _, state = service
        r = client.post("/v1/feedback", json={"label_id": "lbl-1", "action": "keep"})
        assert r.status_code == 200 and r.json() == {"ok": True}
        lines = state.feedback_path.read_text().strip().splitlines()
        rec = json.loads(lines[-1])
        assert rec["label_id"] == "lbl-1" and rec["action"] == "keep"
        assert "ts" in rec

    def test_unknown_action_400(self, service):
        client, _, _ = service
        r = client.post("/v1/feedback", json={"label_id": "x", "action": "shrug"})
        assert r.status_code == 400

    def test_concurrent_posts_do_not_corrupt_log(self, service):
        client, _, state = service
        state.feedback_path.write_text("")
        errors = []

        def post(i):
            try:
                r = client.post(
                    "/v1/feedback", json={"label_id": f"c-{i}", "action": "delete"}
                )
                assert r.status_code == 200
            except Exception as e:  # noqa: BLE001
                errors.append(e)

        threads = [threading.Thread(target=post, args=(i,)) for i in range(100)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        lines = state.feedback_path.read_text().strip().splitlines()
        assert len(lines) == 100
        ids = {json.loads(line)["label_id"] for line in lines}
        assert ids == {f"c-{i}" for i in range(100)}
