// DOM entry point: wires the render/state modules to the document. The
// session id comes from the URL hash; the service base URL from a global
// set in index.html (same origin by default).

import { ApiClient } from "./api.js";
import { renderApp } from "./render.js";
import {
  initialState,
  loadSession,
  refresh,
  submitOutcome,
  toggleWhatIf,
} from "./state.js";
import type { OutcomeForm } from "./types.js";

declare global {
  interface Window {
    CRMKIT_API_BASE?: string;
  }
}

const api = new ApiClient(window.CRMKIT_API_BASE ?? "");
let state = initialState();
const root = document.getElementById("app")!;

function draw() {
  root.innerHTML = renderApp(state);
  const form = root.querySelector<HTMLFormElement>("[data-testid=outcome-form]");
  if (form) {
    form.addEventListener("submit", onSubmit);
    const whatIfBox = form.querySelector<HTMLInputElement>("input[name=whatif]");
    whatIfBox?.addEventListener("change", () => {
      state = toggleWhatIf(state, whatIfBox.checked);
      draw();
    });
  }
}

function readForm(form: HTMLFormElement): OutcomeForm {
  const data = new FormData(form);
  const out: OutcomeForm = {
    dose_index: Number(data.get("dose_index")),
    toxicity: Number(data.get("toxicity")),
  };
  for (const field of ["grade", "group", "response"] as const) {
    const raw = data.get(field);
    if (raw !== null && raw !== "") out[field] = Number(raw);
  }
  if (data.get("override")) out.override = true;
  return out;
}

async function onSubmit(event: Event) {
  event.preventDefault();
  const form = event.currentTarget as HTMLFormElement;
  state = await submitOutcome(api, state, readForm(form));
  draw();
}

async function boot() {
  const id = window.location.hash.replace(/^#/, "");
  if (id) {
    state = await loadSession(api, state, id);
  }
  draw();
}

window.addEventListener("hashchange", boot);
setInterval(async () => {
  if (state.session && !state.session.closed) {
    state = await refresh(api, state);
    draw();
  }
}, 30_000);
boot();
