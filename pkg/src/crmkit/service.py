"""Live-trial session service: state machine, event log, HTTP API.

A session couples a validated design with the accumulating history.
Persistence is a per-session append-only JSON-lines event log plus a
snapshot; reloading replays the log through the same inference code, so
a recomputed session is byte-identical to the stored one. Response
bodies are canonical JSON (sorted keys, full-precision floats), making
payload equality a bytes comparison.
"""

from __future__ import annotations

import datetime as _dt
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import designs as dsn
from . import inference as inf
from .errors import ConfigError, CrmError, HistoryError, SessionError
from .schema import DesignConfig, parse_design_document

STAGE_ONE = "stage_one"
MODEL_BASED = "model_based"
CLOSED = "closed"


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, no whitespace, full float precision."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _fmt(x: float | None, places: int) -> str | None:
    if x is None:
        return None
    return f"{x:.{places}f}"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _session_rng(seed: int, outcome_index: int) -> np.random.Generator:
    """Stream for the randomization draw attached to one outcome."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(outcome_index,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class SessionState:
    """In-memory session; authoritative state lives in the event log."""

    id: str
    config: DesignConfig
    history: inf.TrialHistory = field(default_factory=inf.TrialHistory)
    stage: str = STAGE_ONE
    closed: bool = False
    n_outcomes: int = 0
    recommendation: dsn.DoseRecommendation | None = None
    recommendation_by_group: tuple[int, int] | None = None

    @property
    def open(self) -> bool:
        return not self.closed


def _stage_engaged(policy: dsn.DesignPolicy, history: inf.TrialHistory) -> bool:
    """True once the escalation stage has handed off to the model."""
    if not policy.is_two_stage:
        return True
    return dsn.stage_engaged(policy.inference.escalation, history)


def _compute_recommendation(
    state: SessionState, rng: np.random.Generator | None
) -> tuple[dsn.DoseRecommendation, tuple[int, int] | None]:
    cfg = state.config
    policy, model = cfg.policy, cfg.model
    if policy.grouping is not None:
        results = []
        for group in (0, 1):
            tg = dsn.two_group_next_dose(
                model,
                state.history,
                policy.inference.prior,
                group,
                policy.grouping,
                target=policy.target,
                tie_break=policy.tie_break,
            )
            results.append(tg)
        rec = dsn.DoseRecommendation(
            results[0].dose_index,
            f"two-group class: member {results[0].selected_member} selected "
            f"(weights {results[0].weights[0]:.3f}/{results[0].weights[1]:.3f})",
            estimates=results[0].estimates,
            estimate_kind="two_group",
            model_weights=results[0].weights,
        )
        return rec, (results[0].dose_index, results[1].dose_index)
    if len(state.history) == 0:
        return dsn.initial_dose(policy, model), None
    return dsn.next_dose(policy, model, state.history, rng), None


def _recommendation_payload(state: SessionState) -> dict:
    rec = state.recommendation
    payload = {
        "dose_index": rec.index,
        "rationale": rec.rationale,
        "estimate_kind": rec.estimate_kind,
        "stage": state.stage,
        "patients": state.n_outcomes,
    }
    if state.recommendation_by_group is not None:
        payload["by_group"] = list(state.recommendation_by_group)
    if rec.randomized_from is not None:
        payload["randomized_from"] = rec.randomized_from
    return payload


def _estimates_payload(state: SessionState) -> dict:
    cfg = state.config
    policy, model = cfg.policy, cfg.model
    history = state.history
    k = model.k
    payload: dict = {
        "target": policy.target,
        "stage": state.stage,
        "kind": None,
        "a_hat": None,
        "param_mean": None,
        "param_mode": None,
        "normalizer": None,
        "prob_tox": None,
        "prob_tox_plugin": None,
        "ci": None,
        "model_weights": None,
        "msd": None,
    }
    display: dict = {}

    if policy.msd is not None:
        try:
            msd = dsn.msd_next_dose(policy.msd, model, history)
            payload["msd"] = {
                "best_dose": msd.dose_index,
                "p_success": list(msd.p_success),
                "prob_tox": list(msd.prob_tox),
                "prob_resp": list(msd.prob_resp),
                "tox_param": msd.tox_param,
                "resp_param": msd.resp_param,
            }
            display["msd_p_success"] = [_fmt(v, 3) for v in msd.p_success]
        except (HistoryError, CrmError):
            payload["msd"] = None

    estimated = False
    if policy.is_two_stage:
        if history.is_heterogeneous:
            a_hat = inf.mle(model, history)
            curve = [model.prob_tox(i, a_hat) for i in range(1, k + 1)]
            payload.update(
                kind="mle", a_hat=a_hat, prob_tox=curve, prob_tox_plugin=list(curve)
            )
            estimated = True
            if state.recommendation is not None:
                try:
                    lo, hi = inf.confidence_interval(
                        model, history, a_hat, state.recommendation.index, cfg.ci_level
                    )
                    payload["ci"] = {
                        "level": cfg.ci_level,
                        "dose_index": state.recommendation.index,
                        "lower": lo,
                        "upper": hi,
                    }
                    display["ci"] = [_fmt(lo, 2), _fmt(hi, 2)]
                except CrmError:
                    payload["ci"] = None
            display["a_hat"] = _fmt(a_hat, 3)
    else:
        summ = inf.posterior(model, history, policy.inference.prior)
        curve = (
            summ.prob_tox_mean
            if policy.inference.estimate == dsn.ESTIMATE_POSTERIOR_MEAN
            else summ.prob_tox_plugin
        )
        payload.update(
            kind="posterior",
            param_mean=summ.param_mean,
            param_mode=summ.param_mode,
            normalizer=None if summ.normalizer != summ.normalizer else summ.normalizer,
            prob_tox=list(curve),
            prob_tox_plugin=list(summ.prob_tox_plugin),
        )
        estimated = True

    if policy.model_class is not None:
        weights = inf.posterior_model_weights(
            policy.model_class, history, policy.inference.prior
        )
        payload["model_weights"] = [float(w) for w in weights]
        display["model_weights"] = [_fmt(float(w), 3) for w in weights]
    if policy.grouping is not None and state.recommendation is not None:
        if state.recommendation.model_weights is not None:
            payload["model_weights"] = list(state.recommendation.model_weights)
            display["model_weights"] = [
                _fmt(w, 3) for w in state.recommendation.model_weights
            ]

    if estimated and payload["prob_tox"] is not None:
        display["prob_tox"] = [_fmt(v, 3) for v in payload["prob_tox"]]
    payload["display"] = display
    return payload


class SessionStore:
    """Event-sourced persistence with an in-memory working set."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, SessionState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()

    # -- paths ---------------------------------------------------------

    def _session_dir(self, sid: str) -> Path:
        return self.data_dir / sid

    def _events_path(self, sid: str) -> Path:
        return self._session_dir(sid) / "events.jsonl"

    def _snapshot_path(self, sid: str) -> Path:
        return self._session_dir(sid) / "snapshot.json"

    def _lock(self, sid: str) -> threading.Lock:
        with self._global:
            if sid not in self._locks:
                self._locks[sid] = threading.Lock()
            return self._locks[sid]

    # -- event plumbing --------------------------------------------------

    def _append_event(self, sid: str, event: dict) -> None:
        event = dict(event)
        event["time"] = _now()
        path = self._events_path(sid)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(canonical_json(event) + "\n")

    def _write_snapshot(self, state: SessionState) -> None:
        snap = {
            "id": state.id,
            "config": state.config.raw,
            "stage": state.stage,
            "closed": state.closed,
            "n_outcomes": state.n_outcomes,
            "recommendation": _recommendation_payload(state),
            "history": [
                {
                    "dose_index": r.dose_index,
                    "toxicity": r.toxicity,
                    "grade": r.grade,
                    "group": r.group,
                    "response": r.response,
                }
                for r in state.history
            ],
        }
        self._snapshot_path(state.id).write_text(
            canonical_json(snap), encoding="utf-8"
        )

    def read_events(self, sid: str) -> list[dict]:
        path = self._events_path(sid)
        if not path.exists():
            raise SessionError(f"unknown session {sid}")
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]

    # -- lifecycle -------------------------------------------------------

    def create(self, config_doc: dict, session_id: str | None = None) -> SessionState:
        config = parse_design_document(config_doc)
        sid = session_id or uuid.uuid4().hex
        if self._session_dir(sid).exists():
            raise SessionError(f"session {sid} already exists")
        self._session_dir(sid).mkdir(parents=True)
        state = SessionState(id=sid, config=config)
        if not config.policy.is_two_stage:
            state.stage = MODEL_BASED
        self._append_event(sid, {"type": "session_created", "id": sid, "config": config_doc})
        rec, by_group = _compute_recommendation(state, None)
        state.recommendation = rec
        state.recommendation_by_group = by_group
        self._append_event(
            sid, {"type": "recommendation_issued", "recommendation": _recommendation_payload(state)}
        )
        self._write_snapshot(state)
        self._sessions[sid] = state
        return state

    def get(self, sid: str) -> SessionState:
        if sid in self._sessions:
            return self._sessions[sid]
        state = self._replay(sid)
        self._sessions[sid] = state
        return state

    def _replay(self, sid: str) -> SessionState:
        """Rebuild state by replaying the event log through the engine."""
        events = self.read_events(sid)
        if not events or events[0]["type"] != "session_created":
            raise SessionError(f"session {sid} has a corrupt event log")
        config = parse_design_document(events[0]["config"])
        state = SessionState(id=sid, config=config)
        if not config.policy.is_two_stage:
            state.stage = MODEL_BASED
        for event in events[1:]:
            if event["type"] == "outcome_recorded":
                o = event["outcome"]
                record = inf.PatientRecord(
                    o["dose_index"],
                    o["toxicity"],
                    grade=o.get("grade"),
                    group=o.get("group"),
                    response=o.get("response"),
                )
                state.history = state.history.append(record)
                state.n_outcomes += 1
            elif event["type"] == "stage_changed":
                state.stage = event["to"]
            elif event["type"] == "session_closed":
                state.closed = True
                state.stage = CLOSED
        if not state.closed:
            rng = self._outcome_rng(state, state.n_outcomes - 1) if state.n_outcomes else None
            rec, by_group = _compute_recommendation(state, rng)
            state.recommendation = rec
            state.recommendation_by_group = by_group
        return state

    def _outcome_rng(self, state: SessionState, outcome_index: int):
        if state.config.policy.randomize is None:
            return None
        return _session_rng(state.config.seed, outcome_index)

    # -- operations ------------------------------------------------------

    def record_outcome(self, sid: str, outcome: dict, override: bool = False) -> SessionState:
        with self._lock(sid):
            state = self.get(sid)
            if state.closed:
                raise SessionError(f"session {sid} is closed")
            record = _record_from_payload(outcome)
            self._guard_protocol(state, record, override)
            if override:
                self._append_event(
                    sid,
                    {
                        "type": "override_recorded",
                        "dose_index": record.dose_index,
                        "recommended": state.recommendation.index
                        if state.recommendation
                        else None,
                    },
                )
            state.history = state.history.append(record)
            state.n_outcomes += 1
            self._append_event(sid, {"type": "outcome_recorded", "outcome": outcome})
            if state.stage == STAGE_ONE and _stage_engaged(
                state.config.policy, state.history
            ):
                self._append_event(
                    sid, {"type": "stage_changed", "from": STAGE_ONE, "to": MODEL_BASED}
                )
                state.stage = MODEL_BASED
            rng = self._outcome_rng(state, state.n_outcomes - 1)
            rec, by_group = _compute_recommendation(state, rng)
            state.recommendation = rec
            state.recommendation_by_group = by_group
            self._append_event(
                sid,
                {"type": "recommendation_issued", "recommendation": _recommendation_payload(state)},
            )
            if (
                state.config.max_patients is not None
                and state.n_outcomes >= state.config.max_patients
            ):
                self._close_locked(state)
            self._write_snapshot(state)
            return state

    def _guard_protocol(self, state: SessionState, record: inf.PatientRecord, override: bool):
        if record.dose_index > state.config.model.k:
            raise HistoryError(
                f"dose index {record.dose_index} exceeds the {state.config.model.k}-dose grid"
            )
        if override or state.recommendation is None:
            return
        expected = state.recommendation.index
        if state.recommendation_by_group is not None and record.group is not None:
            expected = state.recommendation_by_group[record.group]
        if record.dose_index != expected:
            raise SessionError(
                f"outcome dose {record.dose_index} differs from the outstanding "
                f"recommendation {expected}; set the override flag to record it anyway"
            )

    def what_if(self, sid: str, outcomes: list[dict]) -> dict:
        """Recommendation and estimates after hypothetical outcomes; no state change."""
        state = self.get(sid)
        if state.closed:
            raise SessionError(f"session {sid} is closed")
        scratch = SessionState(
            id=state.id,
            config=state.config,
            history=state.history,
            stage=state.stage,
            n_outcomes=state.n_outcomes,
            recommendation=state.recommendation,
            recommendation_by_group=state.recommendation_by_group,
        )
        for payload in outcomes:
            record = _record_from_payload(payload)
            self._guard_protocol(scratch, record, bool(payload.get("override")))
            scratch.history = scratch.history.append(record)
            scratch.n_outcomes += 1
            if scratch.stage == STAGE_ONE and _stage_engaged(
                scratch.config.policy, scratch.history
            ):
                scratch.stage = MODEL_BASED
            rec, by_group = _compute_recommendation(scratch, None)
            scratch.recommendation = rec
            scratch.recommendation_by_group = by_group
        return {
            "recommendation": _recommendation_payload(scratch),
            "estimates": _estimates_payload(scratch),
        }

    def close(self, sid: str) -> SessionState:
        with self._lock(sid):
            state = self.get(sid)
            if state.closed:
                return state
            self._close_locked(state)
            self._write_snapshot(state)
            return state

    def _close_locked(self, state: SessionState) -> None:
        self._append_event(state.id, {"type": "session_closed"})
        state.closed = True
        state.stage = CLOSED

    def drop_cache(self) -> None:
        """Forget in-memory state; the next access replays from disk."""
        self._sessions.clear()

    # -- payloads --------------------------------------------------------

    def session_payload(self, state: SessionState) -> dict:
        return {
            "id": state.id,
            "stage": state.stage,
            "closed": state.closed,
            "config": state.config.raw,
            "patients": state.n_outcomes,
            "history": [
                {
                    "dose_index": r.dose_index,
                    "toxicity": r.toxicity,
                    "grade": r.grade,
                    "group": r.group,
                    "response": r.response,
                }
                for r in state.history
            ],
            "recommendation": _recommendation_payload(state)
            if state.recommendation
            else None,
            "estimates": _estimates_payload(state),
        }

    def estimates_payload(self, state: SessionState) -> dict:
        return _estimates_payload(state)

    def recommendation_payload(self, state: SessionState) -> dict:
        return _recommendation_payload(state)


def _record_from_payload(payload: dict) -> inf.PatientRecord:
    try:
        return inf.PatientRecord(
            int(payload["dose_index"]),
            int(payload["toxicity"]),
            grade=payload.get("grade"),
            group=payload.get("group"),
            response=payload.get("response"),
        )
    except KeyError as exc:
        raise HistoryError(f"outcome payload missing field {exc}") from exc


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

def create_app(data_dir: str | Path, ui_dir: str | Path | None = None):
    """The FastAPI application over a session store."""
    from fastapi import Body, FastAPI, Response
    from fastapi.responses import JSONResponse

    store = SessionStore(data_dir)
    app = FastAPI(title="crmkit trial service", version="0.1.0")
    app.state.store = store

    def _json(payload: dict, status_code: int = 200) -> Response:
        return Response(
            content=canonical_json(payload),
            media_type="application/json",
            status_code=status_code,
        )

    def _error(status: int, message: str, fields: list[str] | None = None) -> Response:
        body = {"error": message}
        if fields:
            body["field_errors"] = fields
        return _json(body, status_code=status)

    @app.exception_handler(Exception)
    async def _unhandled(request, exc):  # pragma: no cover
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.post("/sessions")
    def create_session(config: dict = Body(...)):
        try:
            state = store.create(config)
        except ConfigError as exc:
            return _error(422, str(exc), exc.field_errors)
        except (CrmError, ValueError) as exc:
            return _error(422, str(exc))
        return _json(store.session_payload(state), status_code=201)

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        try:
            state = store.get(sid)
        except SessionError as exc:
            return _error(404, str(exc))
        return _json(store.session_payload(state))

    @app.post("/sessions/{sid}/outcomes")
    def post_outcome(sid: str, body: dict = Body(...)):
        override = bool(body.pop("override", False))
        try:
            state = store.record_outcome(sid, body, override=override)
        except SessionError as exc:
            msg = str(exc)
            return _error(404 if "unknown session" in msg else 409, msg)
        except (HistoryError, CrmError, ValueError) as exc:
            return _error(422, str(exc))
        return _json(
            {
                "recommendation": store.recommendation_payload(state),
                "estimates": store.estimates_payload(state),
                "stage": state.stage,
                "closed": state.closed,
            }
        )

    @app.post("/sessions/{sid}/what-if")
    def post_what_if(sid: str, body: dict = Body(...)):
        outcomes = body.get("outcomes")
        if outcomes is None:
            outcomes = [body]
        try:
            payload = store.what_if(sid, outcomes)
        except SessionError as exc:
            msg = str(exc)
            return _error(404 if "unknown session" in msg else 409, msg)
        except (HistoryError, CrmError, ValueError) as exc:
            return _error(422, str(exc))
        return _json(payload)

    @app.get("/sessions/{sid}/estimates")
    def get_estimates(sid: str):
        try:
            state = store.get(sid)
        except SessionError as exc:
            return _error(404, str(exc))
        return _json(store.estimates_payload(state))

    @app.get("/sessions/{sid}/recommendation")
    def get_recommendation(sid: str):
        try:
            state = store.get(sid)
        except SessionError as exc:
            return _error(404, str(exc))
        return _json(store.recommendation_payload(state))

    @app.get("/sessions/{sid}/audit")
    def get_audit(sid: str):
        try:
            events = store.read_events(sid)
        except SessionError as exc:
            return _error(404, str(exc))
        return _json({"events": events})

    @app.post("/sessions/{sid}/close")
    def post_close(sid: str):
        try:
            state = store.close(sid)
        except SessionError as exc:
            return _error(404, str(exc))
        return _json(store.session_payload(state))

    if ui_dir is not None and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
