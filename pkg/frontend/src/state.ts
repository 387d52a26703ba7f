// Session controller: every mutation round-trips through the API before the
// view re-renders (no optimistic updates), and what-if submissions never
// touch the session state.

import { ApiClient, ApiError } from "./api.js";
import type { ViewState } from "./render.js";
import type { OutcomeForm } from "./types.js";

export function initialState(): ViewState {
  return {
    session: null,
    audit: [],
    whatIfMode: false,
    whatIfPreview: null,
    error: null,
    errorFields: [],
    stale: false,
  };
}

export async function loadSession(
  api: ApiClient,
  state: ViewState,
  id: string,
): Promise<ViewState> {
  try {
    const session = await api.getSession(id);
    const audit = await api.getAudit(id);
    return { ...state, session, audit, error: null, errorFields: [], stale: false };
  } catch (err) {
    return withError(state, err);
  }
}

export async function refresh(api: ApiClient, state: ViewState): Promise<ViewState> {
  if (!state.session) return state;
  try {
    const session = await api.getSession(state.session.id);
    const audit = await api.getAudit(state.session.id);
    return { ...state, session, audit, stale: false };
  } catch {
    // keep the last known view, flag it as stale
    return { ...state, stale: true };
  }
}

export function toggleWhatIf(state: ViewState, on: boolean): ViewState {
  return { ...state, whatIfMode: on, whatIfPreview: on ? state.whatIfPreview : null };
}

export async function submitOutcome(
  api: ApiClient,
  state: ViewState,
  form: OutcomeForm,
): Promise<ViewState> {
  if (!state.session) return state;
  const id = state.session.id;
  try {
    if (state.whatIfMode) {
      const preview = await api.whatIf(id, form);
      // the session payload is untouched: only the preview pane changes
      return {
        ...state,
        whatIfPreview: {
          recommendation: preview.recommendation,
          estimates: preview.estimates,
        },
        error: null,
        errorFields: [],
      };
    }
    await api.postOutcome(id, form);
    const session = await api.getSession(id);
    const audit = await api.getAudit(id);
    return {
      ...state,
      session,
      audit,
      error: null,
      errorFields: [],
      whatIfPreview: null,
      stale: false,
    };
  } catch (err) {
    return withError(state, err);
  }
}

function withError(state: ViewState, err: unknown): ViewState {
  if (err instanceof ApiError) {
    return { ...state, error: err.message, errorFields: err.fieldErrors };
  }
  return { ...state, error: String(err), errorFields: [] };
}
