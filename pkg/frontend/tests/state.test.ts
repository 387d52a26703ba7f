// Conduct-flow behaviour against verbatim service fixtures: entering the
// worked illustration's sixteen outcomes, what-if purity, replay equality.

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { renderApp, renderHistoryTable } from "../src/render.js";
import {
  initialState,
  loadSession,
  refresh,
  submitOutcome,
  toggleWhatIf,
} from "../src/state.js";
import type { SessionPayload } from "../src/types.js";
import { fixture, fixtureText, makeFetch, type RecordedCall } from "./helpers.js";

const SID = fixture<SessionPayload>("session_00.json").id;

const OUTCOMES: Array<[number, number]> = [
  [1, 0], [1, 0], [1, 0],
  [2, 0], [2, 0], [2, 0],
  [3, 1], [3, 1], [3, 0],
  [2, 0], [2, 1], [2, 0], [2, 0], [2, 0], [2, 0], [2, 1],
];

/** A stub service replaying the captured illustration session. */
function illustrationService() {
  let step = 0;
  const calls: RecordedCall[] = [];
  const { fetchLike } = makeFetch((call) => {
    calls.push(call);
    if (call.method === "GET" && call.path === `/sessions/${SID}`) {
      return { body: fixtureText(`session_${String(step).padStart(2, "0")}.json`) };
    }
    if (call.method === "GET" && call.path === `/sessions/${SID}/audit`) {
      return { body: fixtureText(`audit_${String(step).padStart(2, "0")}.json`) };
    }
    if (call.method === "POST" && call.path === `/sessions/${SID}/outcomes`) {
      step += 1;
      return { body: fixtureText(`outcome_${String(step).padStart(2, "0")}.json`) };
    }
    if (call.method === "POST" && call.path === `/sessions/${SID}/what-if`) {
      return { body: fixtureText("whatif_after9.json") };
    }
    return null;
  });
  return { api: new ApiClient("", fetchLike), calls, currentStep: () => step };
}

describe("entering the illustration outcomes through the UI", () => {
  it("reproduces the dose-2 final recommendation with verbatim values", async () => {
    const { api } = illustrationService();
    let state = await loadSession(api, initialState(), SID);
    expect(state.session!.recommendation!.dose_index).toBe(1);

    for (const [dose, tox] of OUTCOMES) {
      state = await submitOutcome(api, state, {
        dose_index: dose,
        toxicity: tox,
        grade: tox ? 4 : 0,
      });
      expect(state.error).toBeNull();
    }

    const html = renderApp(state);
    expect(state.session!.recommendation!.dose_index).toBe(2);
    expect(html).toContain('data-testid="recommended-dose">2<');

    // the displayed strings are byte-identical to the API payload fields
    const display = state.session!.estimates.display;
    expect(html).toContain(`data-testid="prob-tox-2">${display.prob_tox![1]}<`);
    expect(html).toContain(`data-testid="ci-lower">${display.ci![0]}<`);
    expect(html).toContain(`data-testid="ci-upper">${display.ci![1]}<`);
    const raw = fixtureText("session_16.json");
    for (const shown of [display.prob_tox![1], display.ci![0], display.ci![1]]) {
      expect(raw).toContain(`"${shown}"`);
    }
  });

  it("renders the same view as loading the persisted session directly", async () => {
    const { api } = illustrationService();
    let live = await loadSession(api, initialState(), SID);
    for (const [dose, tox] of OUTCOMES) {
      live = await submitOutcome(api, live, {
        dose_index: dose,
        toxicity: tox,
        grade: tox ? 4 : 0,
      });
    }

    // a fresh client loading the stored session mid-way through no entries
    const { fetchLike } = makeFetch((call) => {
      if (call.method === "GET" && call.path === `/sessions/${SID}`) {
        return { body: fixtureText("session_16.json") };
      }
      if (call.method === "GET" && call.path === `/sessions/${SID}/audit`) {
        return { body: fixtureText("audit_16.json") };
      }
      return null;
    });
    const reloaded = await loadSession(
      new ApiClient("", fetchLike),
      initialState(),
      SID,
    );
    expect(renderApp(reloaded)).toBe(renderApp(live));
  });
});

describe("what-if exploration", () => {
  async function stateAfterNine() {
    const { api, calls } = illustrationService();
    let state = await loadSession(api, initialState(), SID);
    for (const [dose, tox] of OUTCOMES.slice(0, 9)) {
      state = await submitOutcome(api, state, {
        dose_index: dose,
        toxicity: tox,
        grade: tox ? 4 : 0,
      });
    }
    return { api, state, calls };
  }

  it("posts to /what-if and never mutates the history table", async () => {
    const { api, state, calls } = await stateAfterNine();
    const tableBefore = renderHistoryTable(state.session!.history);
    const outcomesBefore = calls.filter(
      (c) => c.method === "POST" && c.path.endsWith("/outcomes"),
    ).length;

    let probing = toggleWhatIf(state, true);
    probing = await submitOutcome(api, probing, {
      dose_index: 2,
      toxicity: 0,
      grade: 0,
    });

    const whatIfCalls = calls.filter(
      (c) => c.method === "POST" && c.path.endsWith("/what-if"),
    );
    const outcomesAfter = calls.filter(
      (c) => c.method === "POST" && c.path.endsWith("/outcomes"),
    ).length;
    expect(whatIfCalls.length).toBe(1);
    expect(outcomesAfter).toBe(outcomesBefore); // nothing recorded
    expect(renderHistoryTable(probing.session!.history)).toBe(tableBefore);

    // the preview shows the what-if parameter estimate verbatim
    const html = renderApp(probing);
    const shown = probing.whatIfPreview!.estimates.display.a_hat!;
    expect(html).toContain(`data-testid="a-hat">${shown}<`);
    expect(fixtureText("whatif_after9.json")).toContain(`"${shown}"`);
  });

  it("committing the probed outcome matches the what-if recommendation", async () => {
    const { api, state } = await stateAfterNine();
    const probe = await submitOutcome(api, toggleWhatIf(state, true), {
      dose_index: 2,
      toxicity: 0,
      grade: 0,
    });
    const committed = await submitOutcome(api, toggleWhatIf(probe, false), {
      dose_index: 2,
      toxicity: 0,
      grade: 0,
    });
    expect(committed.session!.recommendation!.dose_index).toBe(
      probe.whatIfPreview!.recommendation.dose_index,
    );
  });
});

describe("failure handling", () => {
  it("surfaces protocol violations inline and keeps the view", async () => {
    const { fetchLike } = makeFetch((call) => {
      if (call.method === "GET" && call.path === `/sessions/${SID}`) {
        return { body: fixtureText("session_00.json") };
      }
      if (call.method === "GET" && call.path === `/sessions/${SID}/audit`) {
        return { body: fixtureText("audit_00.json") };
      }
      if (call.method === "POST" && call.path.endsWith("/outcomes")) {
        return {
          status: 409,
          body: JSON.stringify({
            error: "outcome dose 3 differs from the outstanding recommendation 1",
          }),
        };
      }
      return null;
    });
    const api = new ApiClient("", fetchLike);
    let state = await loadSession(api, initialState(), SID);
    const historyBefore = renderHistoryTable(state.session!.history);
    state = await submitOutcome(api, state, { dose_index: 3, toxicity: 0, grade: 0 });
    expect(state.error).toContain("differs from the outstanding recommendation");
    expect(renderApp(state)).toContain('data-testid="error-banner"');
    expect(renderHistoryTable(state.session!.history)).toBe(historyBefore);
  });

  it("flags stale data when a refresh fails", async () => {
    let healthy = true;
    const { fetchLike } = makeFetch((call) => {
      if (!healthy) return { status: 500, body: '{"error":"down"}' };
      if (call.method === "GET" && call.path === `/sessions/${SID}`) {
        return { body: fixtureText("session_00.json") };
      }
      if (call.method === "GET" && call.path === `/sessions/${SID}/audit`) {
        return { body: fixtureText("audit_00.json") };
      }
      return null;
    });
    const api = new ApiClient("", fetchLike);
    let state = await loadSession(api, initialState(), SID);
    healthy = false;
    state = await refresh(api, state);
    expect(state.stale).toBe(true);
    expect(renderApp(state)).toContain('data-testid="stale-banner"');
    expect(state.session).not.toBeNull(); // last known view kept
  });
});
