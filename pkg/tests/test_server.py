import threading

import pytest
from fastapi.testclient import TestClient

from contourqa.server import build_state, create_app


@pytest.fixture()
def service(trained_pipeline, tmp_path):
    state = build_state(
        bundle_root=trained_pipeline / "data",
        checkpoint_path=trained_pipeline / "model.ckpt",
        calibration_records_path=trained_pipeline / "calrecs.csv",
        event_log_path=tmp_path / "events.jsonl",
        target_accuracy=0.85,
        t_passes=8,
        seed=9,
    )
    return state, TestClient(create_app(state))


def make_client(trained_pipeline, log_path, target=0.85):
    state = build_state(
        bundle_root=trained_pipeline / "data",
        checkpoint_path=trained_pipeline / "model.ckpt",
        calibration_records_path=trained_pipeline / "calrecs.csv",
        event_log_path=log_path,
        target_accuracy=target,
        t_passes=8,
        seed=9,
    )
    return state, TestClient(create_app(state))


class TestCases:
    def test_case_list_shape(self, service):
        _, client = service
        body = client.get("/api/cases").json()
        assert len(body["cases"]) == 20
        first = body["cases"][0]
        assert {"subject_id", "slice_count", "assessed_count"} <= set(first)

    def test_slice_payload(self, service):
        _, client = service
        body = client.get("/api/cases/s0000/slices/0").json()
        assert body["subject_id"] == "s0000"
        assert body["verdict"]["status"] in ("confident", "abstain")
        assert body["contour"] and body["contour"][0][0] == body["contour"][0][-1]
        assert body["seq"] == 0

    def test_image_bytes(self, service):
        _, client = service
        r = client.get("/api/cases/s0000/slices/0/image")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_case_404(self, service):
        _, client = service
        assert client.get("/api/cases/nope/slices/0").status_code == 404
        assert client.get("/api/cases/s0000/slices/999").status_code == 404


class TestAssessments:
    def find_confident(self, state, client, predicted):
        for cid in sorted(state.bundles):
            bundle = state.bundles[cid]
            for n in range(bundle.slice_count):
                body = client.get(f"/api/cases/{cid}/slices/{n}").json()
                v = body["verdict"]
                if v["status"] == "confident" and v.get("predicted_class") == predicted:
                    return cid, n
        pytest.skip(f"no confident class-{predicted} slice in fixture")

    def test_invalid_class_422(self, service):
        _, client = service
        r = client.post(
            "/api/cases/s0000/slices/0/assessment", json={"rater_id": "dr", "assessed_class": 5}
        )
        assert r.status_code == 422

    def test_warning_fires_on_contradiction(self, service):
        state, client = service
        cid, n = self.find_confident(state, client, predicted=1)
        r = client.post(
            f"/api/cases/{cid}/slices/{n}/assessment",
            json={"rater_id": "dr_a", "assessed_class": 2, "expected_seq": 0},
        )
        assert r.status_code == 200
        assert r.json()["verdict"]["warning"] is True

    def test_agreement_no_warning(self, service):
        state, client = service
        cid, n = self.find_confident(state, client, predicted=2)
        r = client.post(
            f"/api/cases/{cid}/slices/{n}/assessment",
            json={"rater_id": "dr_a", "assessed_class": 2},
        )
        assert r.json()["verdict"]["warning"] is False

    def test_stale_seq_conflict(self, service):
        _, client = service
        first = client.post(
            "/api/cases/s0001/slices/0/assessment",
            json={"rater_id": "dr_a", "assessed_class": 1, "expected_seq": 0},
        )
        assert first.status_code == 200
        stale = client.post(
            "/api/cases/s0001/slices/0/assessment",
            json={"rater_id": "dr_b", "assessed_class": 2, "expected_seq": 0},
        )
        assert stale.status_code == 409
        fresh = client.post(
            "/api/cases/s0001/slices/0/assessment",
            json={"rater_id": "dr_b", "assessed_class": 2, "expected_seq": first.json()["seq"]},
        )
        assert fresh.status_code == 200

    def test_concurrent_posts_to_distinct_slices(self, service):
        state, client = service
        results = []

        def post(n):
            r = client.post(
                f"/api/cases/s0002/slices/{n}/assessment",
                json={"rater_id": f"dr_{n}", "assessed_class": 1},
            )
            results.append(r.status_code)

        threads = [threading.Thread(target=post, args=(n,)) for n in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == [200] * 8
        assessment_events = [e for e in state.log.events if e.kind == "assessment"]
        sids = [e.payload["slice_id"] for e in assessment_events if e.payload["slice_id"].startswith("s0002")]
        assert sorted(sids) == [f"s0002/{n:04d}" for n in range(8)]
        assert len({e.seq for e in state.log.events}) == len(state.log.events)


class TestCalibrationEndpoints:
    def test_get_calibration(self, service):
        _, client = service
        body = client.get("/api/calibration").json()
        assert {"target_accuracy", "tau", "coverage", "achieved_accuracy", "curve_bins"} <= set(body)
        assert len(body["curve_bins"]) >= 1

    def test_post_threshold_recalibrates(self, service):
        state, client = service
        before = client.get("/api/calibration").json()
        r = client.post("/api/threshold", json={"target_accuracy": 0.7})
        assert r.status_code == 200
        after = r.json()
        assert after["target_accuracy"] == 0.7
        assert after["coverage"] >= before["coverage"] - 1e-12
        kinds = [e.kind for e in state.log.events]
        assert kinds[-1] == "threshold_change"

    def test_post_threshold_invalid(self, service):
        _, client = service
        assert client.post("/api/threshold", json={"target_accuracy": 1.5}).status_code == 422


class TestReplay:
    def test_restart_reproduces_get_responses(self, trained_pipeline, tmp_path):
        log_path = tmp_path / "events.jsonl"
        state1, client1 = make_client(trained_pipeline, log_path)
        client1.post(
            "/api/cases/s0000/slices/1/assessment", json={"rater_id": "dr", "assessed_class": 0}
        )
        client1.post("/api/threshold", json={"target_accuracy": 0.7})
        client1.post(
            "/api/cases/s0003/slices/2/assessment", json={"rater_id": "dr", "assessed_class": 2}
        )
        _, client2 = make_client(trained_pipeline, log_path)
        for url in (
            "/api/cases",
            "/api/cases/s0000/slices/1",
            "/api/cases/s0003/slices/2",
            "/api/cases/s0004/slices/0",
            "/api/calibration",
        ):
            assert client1.get(url).json() == client2.get(url).json(), url
