"""Capture real service payloads as test fixtures for the UI suite.

Drives the HTTP app end to end (the worked six-level design, its sixteen
recorded outcomes, a what-if probe, a Bayes session, an MSD session, a
closed session) and writes every response body verbatim. UI tests assert
byte equality between displayed values and these fixture fields.
"""

import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from crmkit.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

ALPHA = [0.04, 0.07, 0.20, 0.35, 0.55, 0.70]
OUTCOMES_16 = (
    [(1, 0)] * 3
    + [(2, 0)] * 3
    + [(3, 1), (3, 1), (3, 0)]
    + [(2, 0), (2, 1), (2, 0), (2, 0), (2, 0), (2, 0), (2, 1)]
)


def design_two_stage():
    return {
        "skeleton": {"alpha": ALPHA},
        "model": {"kind": "power-direct"},
        "policy": {
            "target": 0.2,
            "inference": {"mode": "likelihood-two-stage", "escalation": {"cohort_size": 3}},
        },
        "ci_level": 0.9,
    }


def design_bayes():
    return {
        "skeleton": {"alpha": ALPHA},
        "model": {"kind": "power-exp"},
        "policy": {
            "target": 0.2,
            "inference": {
                "mode": "bayes",
                "prior": {"kind": "normal", "mean": 0.0, "variance": 1.7956},
            },
        },
    }


def design_msd():
    doc = design_two_stage()
    doc["policy"]["msd"] = {"response_alpha": [0.1, 0.2, 0.35, 0.5, 0.65, 0.8]}
    return doc


def save(name: str, content: bytes) -> None:
    (FIXTURES / name).write_bytes(content)
    print(f"wrote {name} ({len(content)} bytes)")


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        client = TestClient(create_app(tmp))

        # --- the worked illustration, entered patient by patient -----------
        r = client.post("/sessions", json=design_two_stage())
        assert r.status_code == 201, r.text
        sid = r.json()["id"]
        save("create.json", r.content)

        save("session_00.json", client.get(f"/sessions/{sid}").content)
        save("audit_00.json", client.get(f"/sessions/{sid}/audit").content)
        for i, (dose, tox) in enumerate(OUTCOMES_16, start=1):
            body = {"dose_index": dose, "toxicity": tox, "grade": 4 if tox else 0}
            r = client.post(f"/sessions/{sid}/outcomes", json=body)
            assert r.status_code == 200, r.text
            save(f"outcome_{i:02d}.json", r.content)
            save(f"session_{i:02d}.json", client.get(f"/sessions/{sid}").content)
            save(f"audit_{i:02d}.json", client.get(f"/sessions/{sid}/audit").content)
            if i == 9:
                probe = client.post(
                    f"/sessions/{sid}/what-if",
                    json={"dose_index": 2, "toxicity": 0, "grade": 0},
                )
                assert probe.status_code == 200, probe.text
                save("whatif_after9.json", probe.content)

        save("session_final.json", client.get(f"/sessions/{sid}").content)
        save("estimates_final.json", client.get(f"/sessions/{sid}/estimates").content)
        save(
            "recommendation_final.json",
            client.get(f"/sessions/{sid}/recommendation").content,
        )
        save("audit_final.json", client.get(f"/sessions/{sid}/audit").content)

        # --- an empty Bayes session (prior-based curve) ---------------------
        r = client.post("/sessions", json=design_bayes())
        assert r.status_code == 201, r.text
        save("bayes_create.json", r.content)

        # --- an MSD session with both outcomes recorded ---------------------
        r = client.post("/sessions", json=design_msd())
        assert r.status_code == 201, r.text
        msd_sid = r.json()["id"]
        msd_outcomes = [
            (1, 0, 0),
            (2, 0, 1),
            (3, 1, None),
            (3, 1, None),
            (3, 0, 0),
            (2, 0, 1),
            (2, 0, 1),
            (2, 1, None),
            (2, 0, 0),
        ]
        for dose, tox, resp in msd_outcomes:
            body = {
                "dose_index": dose,
                "toxicity": tox,
                "grade": 4 if tox else 0,
                "override": True,
            }
            if resp is not None:
                body["response"] = resp
            r = client.post(f"/sessions/{msd_sid}/outcomes", json=body)
            assert r.status_code == 200, r.text
        save("msd_session.json", client.get(f"/sessions/{msd_sid}").content)

        # --- a closed session ------------------------------------------------
        r = client.post("/sessions", json=design_two_stage())
        closed_sid = r.json()["id"]
        client.post(f"/sessions/{closed_sid}/close")
        save("session_closed.json", client.get(f"/sessions/{closed_sid}").content)
        r = client.post(
            f"/sessions/{closed_sid}/outcomes",
            json={"dose_index": 1, "toxicity": 0, "grade": 0},
        )
        assert r.status_code == 409
        save("closed_outcome_error.json", r.content)
    return 0


if __name__ == "__main__":
    sys.exit(main())
