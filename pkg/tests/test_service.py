"""Session state machine, event-sourced persistence, and the HTTP API."""

import json

import pytest
from fastapi.testclient import TestClient

import crmkit as ck
from crmkit.service import SessionStore, canonical_json, create_app

from conftest import OUTCOMES_16, grade_for, illustration_design_doc


@pytest.fixture()
def store(tmp_path):
    return SessionStore(tmp_path / "data")


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "api-data")
    return TestClient(app)


def outcome_payload(dose, tox):
    return {"dose_index": dose, "toxicity": tox, "grade": grade_for(tox)}


def bayes_design_doc(prior=None):
    doc = illustration_design_doc()
    doc["model"] = {"kind": "power-exp"}
    doc["policy"]["inference"] = {
        "mode": "bayes",
        "prior": prior or {"kind": "normal", "mean": 0.0, "variance": 1.34 ** 2},
    }
    return doc


# ---------------------------------------------------------------------------
# Store-level behaviour
# ---------------------------------------------------------------------------

class TestSessionStore:
    def test_two_stage_starts_at_lowest(self, store):
        state = store.create(illustration_design_doc())
        assert state.recommendation.index == 1
        assert state.stage == "stage_one"

    def test_partition_prior_starts_at_modal_interval(self, store):
        doc = bayes_design_doc(
            prior={"kind": "partition", "mass": [0.05, 0.19, 0.19, 0.19, 0.19, 0.19]}
        )
        state = store.create(doc)
        assert state.recommendation.index == 2  # first of the tied modal masses
        assert state.stage == "model_based"

    def test_invalid_skeleton_rejected(self, store):
        doc = illustration_design_doc()
        doc["skeleton"]["alpha"] = [0.2, 0.1, 0.3, 0.4, 0.5, 0.6]
        with pytest.raises(ck.ConfigError):
            store.create(doc)

    def test_illustration_replay(self, store):
        state = store.create(illustration_design_doc(), session_id="golden")
        recommendations = []
        for dose, tox in OUTCOMES_16:
            state = store.record_outcome("golden", outcome_payload(dose, tox))
            recommendations.append(state.recommendation.index)
        # doses for patients 2..16 plus the final recommendation
        assert recommendations == [1, 1, 2, 2, 2, 3, 3, 3, 2, 2, 2, 2, 2, 2, 2, 2]
        est = store.estimates_payload(state)
        assert est["prob_tox"][1] == pytest.approx(0.212, abs=1e-3)
        assert est["ci"]["lower"] == pytest.approx(0.0728, abs=1e-3)
        assert est["ci"]["upper"] == pytest.approx(0.4008, abs=1e-3)
        assert state.stage == "model_based"

    def test_non_recommended_dose_rejected_without_override(self, store):
        store.create(illustration_design_doc(), session_id="s")
        with pytest.raises(ck.SessionError):
            store.record_outcome("s", outcome_payload(3, 0))

    def test_override_is_logged(self, store):
        store.create(illustration_design_doc(), session_id="s")
        store.record_outcome("s", outcome_payload(2, 0), override=True)
        events = store.read_events("s")
        assert any(e["type"] == "override_recorded" for e in events)

    def test_what_if_is_pure_and_consistent(self, store):
        store.create(illustration_design_doc(), session_id="s")
        for dose, tox in OUTCOMES_16[:9]:
            store.record_outcome("s", outcome_payload(dose, tox))
        state = store.get("s")
        before = canonical_json(store.session_payload(state))
        probe = store.what_if("s", [outcome_payload(2, 0)])
        assert probe["estimates"]["a_hat"] == pytest.approx(0.759, abs=1e-3)
        probe_again = store.what_if("s", [outcome_payload(2, 0)])
        assert canonical_json(probe) == canonical_json(probe_again)
        after = canonical_json(store.session_payload(store.get("s")))
        assert before == after  # no state change
        state = store.record_outcome("s", outcome_payload(2, 0))
        assert (
            probe["recommendation"]["dose_index"] == state.recommendation.index
        )

    def test_crash_safe_replay_byte_identical(self, store):
        store.create(illustration_design_doc(), session_id="g2")
        for dose, tox in OUTCOMES_16:
            store.record_outcome("g2", outcome_payload(dose, tox))
        live = store.get("g2")
        est_live = canonical_json(store.estimates_payload(live))
        rec_live = canonical_json(store.recommendation_payload(live))
        store.drop_cache()
        replayed = store.get("g2")
        assert canonical_json(store.estimates_payload(replayed)) == est_live
        assert canonical_json(store.recommendation_payload(replayed)) == rec_live

    def test_closed_session_rejects_outcomes(self, store):
        store.create(illustration_design_doc(), session_id="s")
        store.close("s")
        with pytest.raises(ck.SessionError):
            store.record_outcome("s", outcome_payload(1, 0))
        with pytest.raises(ck.SessionError):
            store.what_if("s", [outcome_payload(1, 0)])

    def test_max_patients_autocloses(self, store):
        doc = illustration_design_doc()
        doc["max_patients"] = 2
        store.create(doc, session_id="s")
        store.record_outcome("s", outcome_payload(1, 0))
        state = store.record_outcome("s", outcome_payload(1, 0))
        assert state.closed
        assert state.stage == "closed"

    def test_stage_transition_event(self, store):
        store.create(illustration_design_doc(), session_id="s")
        for dose, tox in OUTCOMES_16[:9]:
            store.record_outcome("s", outcome_payload(dose, tox))
        events = store.read_events("s")
        changes = [e for e in events if e["type"] == "stage_changed"]
        assert len(changes) == 1
        assert changes[0]["to"] == "model_based"
        # transition happened at completion of the cohort with the first DLT
        outcome_positions = [
            i for i, e in enumerate(events) if e["type"] == "outcome_recorded"
        ]
        change_pos = events.index(changes[0])
        assert sum(1 for p in outcome_positions if p < change_pos) == 9

    def test_audit_log_append_only(self, store):
        store.create(illustration_design_doc(), session_id="s")
        n0 = len(store.read_events("s"))
        store.record_outcome("s", outcome_payload(1, 0))
        n1 = len(store.read_events("s"))
        assert n1 > n0
        assert store.read_events("s")[:n0] == store.read_events("s")[:n0]

    def test_bayes_session_estimates_before_data(self, store):
        state = store.create(bayes_design_doc(), session_id="b")
        est = store.estimates_payload(state)
        assert est["kind"] == "posterior"
        assert len(est["prob_tox"]) == 6
        assert state.stage == "model_based"

    def test_randomized_design_deterministic_per_outcome(self, tmp_path):
        doc = bayes_design_doc()
        doc["policy"]["randomize"] = {"delta_prob": 0.5}
        doc["seed"] = 99
        store_a = SessionStore(tmp_path / "a")
        store_b = SessionStore(tmp_path / "b")
        for s in (store_a, store_b):
            s.create(doc, session_id="r")
        seq_a, seq_b = [], []
        for s, seq in ((store_a, seq_a), (store_b, seq_b)):
            state = s.get("r")
            for _ in range(6):
                dose = state.recommendation.index
                state = s.record_outcome(
                    "r", {"dose_index": dose, "toxicity": 0}, override=False
                )
                seq.append(state.recommendation.index)
        assert seq_a == seq_b  # same seed, same draws
        store_a.drop_cache()
        replayed = store_a.get("r")
        assert replayed.recommendation.index == seq_a[-1]


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

class TestHttpApi:
    def test_create_and_fetch(self, client):
        r = client.post("/sessions", json=illustration_design_doc())
        assert r.status_code == 201
        doc = r.json()
        sid = doc["id"]
        assert doc["recommendation"]["dose_index"] == 1
        r = client.get(f"/sessions/{sid}")
        assert r.status_code == 200
        assert r.json()["stage"] == "stage_one"

    def test_schema_violation_field_messages(self, client):
        doc = illustration_design_doc()
        doc["policy"]["target"] = 1.5
        r = client.post("/sessions", json=doc)
        assert r.status_code == 422
        body = r.json()
        assert any("target" in msg for msg in body["field_errors"])

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404
        assert client.get("/sessions/nope/estimates").status_code == 404

    def test_outcome_flow_and_estimates(self, client):
        sid = client.post("/sessions", json=illustration_design_doc()).json()["id"]
        for dose, tox in OUTCOMES_16:
            r = client.post(
                f"/sessions/{sid}/outcomes", json=outcome_payload(dose, tox)
            )
            assert r.status_code == 200, r.text
        est = client.get(f"/sessions/{sid}/estimates").json()
        assert est["display"]["prob_tox"][1] == "0.213"
        rec = client.get(f"/sessions/{sid}/recommendation").json()
        assert rec["dose_index"] == 2

    def test_protocol_guard_and_override(self, client):
        sid = client.post("/sessions", json=illustration_design_doc()).json()["id"]
        r = client.post(f"/sessions/{sid}/outcomes", json=outcome_payload(3, 0))
        assert r.status_code == 409
        payload = outcome_payload(3, 0)
        payload["override"] = True
        r = client.post(f"/sessions/{sid}/outcomes", json=payload)
        assert r.status_code == 200
        audit = client.get(f"/sessions/{sid}/audit").json()["events"]
        assert any(e["type"] == "override_recorded" for e in audit)

    def test_what_if_leaves_history(self, client):
        sid = client.post("/sessions", json=illustration_design_doc()).json()["id"]
        client.post(f"/sessions/{sid}/outcomes", json=outcome_payload(1, 0))
        history_before = client.get(f"/sessions/{sid}").json()["history"]
        r = client.post(f"/sessions/{sid}/what-if", json=outcome_payload(1, 0))
        assert r.status_code == 200
        assert "recommendation" in r.json()
        history_after = client.get(f"/sessions/{sid}").json()["history"]
        assert history_before == history_after

    def test_closed_session_conflict(self, client):
        sid = client.post("/sessions", json=illustration_design_doc()).json()["id"]
        client.post(f"/sessions/{sid}/close")
        r = client.post(f"/sessions/{sid}/outcomes", json=outcome_payload(1, 0))
        assert r.status_code == 409

    def test_payload_bytes_stable_across_requests(self, client):
        sid = client.post("/sessions", json=illustration_design_doc()).json()["id"]
        for dose, tox in OUTCOMES_16[:9]:
            client.post(f"/sessions/{sid}/outcomes", json=outcome_payload(dose, tox))
        a = client.get(f"/sessions/{sid}/estimates").content
        b = client.get(f"/sessions/{sid}/estimates").content
        assert a == b


class TestCli:
    def test_session_roundtrip(self, tmp_path):
        from click.testing import CliRunner
        from crmkit.cli import main

        cfg = tmp_path / "design.json"
        cfg.write_text(json.dumps(illustration_design_doc()))
        runner = CliRunner()
        r = runner.invoke(
            main,
            ["session", "new", "--config", str(cfg), "--data", str(tmp_path / "d"), "--id", "cli1"],
        )
        assert r.exit_code == 0, r.output
        assert json.loads(r.output)["recommendation"]["dose_index"] == 1
        r = runner.invoke(
            main,
            [
                "session", "outcome", "cli1", "--data", str(tmp_path / "d"),
                "--dose", "1", "--tox", "0", "--grade", "0",
            ],
        )
        assert r.exit_code == 0, r.output
        r = runner.invoke(
            main,
            [
                "session", "what-if", "cli1", "--data", str(tmp_path / "d"),
                "--dose", "1", "--tox", "0", "--grade", "0",
            ],
        )
        assert r.exit_code == 0, r.output
        r = runner.invoke(main, ["session", "show", "cli1", "--data", str(tmp_path / "d")])
        assert r.exit_code == 0
        assert json.loads(r.output)["patients"] == 1

    def test_simulate_writes_reports(self, tmp_path):
        from click.testing import CliRunner
        from crmkit.cli import main

        cfg = tmp_path / "design.json"
        cfg.write_text(json.dumps(illustration_design_doc()))
        scen = tmp_path / "scenario.json"
        scen.write_text(
            json.dumps({"true_tox": [0.03, 0.22, 0.45, 0.60, 0.80, 0.95], "n": 16})
        )
        runner = CliRunner()
        r = runner.invoke(
            main,
            [
                "simulate", "--design", str(cfg), "--scenario", str(scen),
                "--replicates", "25", "--seed", "7", "--out", str(tmp_path / "out"),
            ],
        )
        assert r.exit_code == 0, r.output
        report = json.loads((tmp_path / "out" / "oc.json").read_text())
        assert len(report["recommendation_dist"]) == 6
        assert (tmp_path / "out" / "oc.csv").exists()

    def test_partition_table(self, tmp_path):
        from click.testing import CliRunner
        from crmkit.cli import main

        cfg = tmp_path / "design.json"
        cfg.write_text(json.dumps(illustration_design_doc()))
        runner = CliRunner()
        r = runner.invoke(main, ["partition", "--design", str(cfg), "--format", "tsv"])
        assert r.exit_code == 0, r.output
        assert r.output.splitlines()[0] == "dose_index\tlower\tupper"
