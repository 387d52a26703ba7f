// Pure HTML renderers. Every number shown to the user is either an integer
// from the payload or a server-formatted display string, copied verbatim;
// numeric values are used only to position chart elements.

import type {
  AuditEvent,
  Estimates,
  HistoryRow,
  Recommendation,
  SessionPayload,
} from "./types.js";

export function escapeHtml(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function cell(value: unknown): string {
  if (value === null || value === undefined) return "<td>–</td>";
  return `<td>${escapeHtml(value)}</td>`;
}

export function renderStageBadge(stage: string): string {
  const label = { stage_one: "stage one", model_based: "model based", closed: "closed" }[
    stage
  ] ?? stage;
  return `<span class="badge stage-${escapeHtml(stage)}">${escapeHtml(label)}</span>`;
}

export function renderHistoryTable(history: HistoryRow[]): string {
  const rows = history
    .map(
      (r, i) =>
        `<tr>${cell(i + 1)}${cell(r.dose_index)}${cell(r.toxicity ? "yes" : "no")}` +
        `${cell(r.grade)}${cell(r.group)}${cell(r.response)}</tr>`,
    )
    .join("");
  return `
  <table class="history" data-testid="history-table" data-rows="${history.length}">
    <thead><tr><th>#</th><th>Dose</th><th>Toxicity</th><th>Grade</th><th>Group</th><th>Response</th></tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}

export function renderRecommendation(rec: Recommendation | null): string {
  if (!rec) {
    return `<div class="card recommendation" data-testid="recommendation">No recommendation.</div>`;
  }
  const byGroup = rec.by_group
    ? `<div class="by-group">group 0 → dose ${rec.by_group[0]}, group 1 → dose ${rec.by_group[1]}</div>`
    : "";
  return `
  <div class="card recommendation" data-testid="recommendation">
    <div class="k">Next recommended dose</div>
    <div class="v" data-testid="recommended-dose">${rec.dose_index}</div>
    <div class="rationale" data-testid="rationale">${escapeHtml(rec.rationale)}</div>
    ${byGroup}
  </div>`;
}

function chartSvg(est: Estimates): string {
  const curve = est.prob_tox;
  if (!curve || curve.length === 0) return "";
  const k = curve.length;
  const width = 420;
  const height = 220;
  const pad = 30;
  const x = (i: number) => pad + ((width - 2 * pad) * i) / (k - 1);
  const y = (p: number) => height - pad - (height - 2 * pad) * p;
  const points = curve
    .map((p, i) => `<circle cx="${x(i)}" cy="${y(p)}" r="4" class="pt" />`)
    .join("");
  const path = curve
    .map((p, i) => `${i === 0 ? "M" : "L"}${x(i)},${y(p)}`)
    .join(" ");
  let band = "";
  if (est.ci) {
    const cx = x(est.ci.dose_index - 1);
    band = `<line x1="${cx}" y1="${y(est.ci.lower)}" x2="${cx}" y2="${y(
      est.ci.upper,
    )}" class="ci-band" data-testid="ci-band" />`;
  }
  const targetY = y(est.target);
  return `
  <svg viewBox="0 0 ${width} ${height}" class="tox-chart" role="img" aria-label="dose-toxicity curve">
    <line x1="${pad}" y1="${targetY}" x2="${width - pad}" y2="${targetY}" class="target-line" />
    <text x="${width - pad}" y="${targetY - 4}" text-anchor="end" class="target-label">target ${escapeHtml(
    est.target,
  )}</text>
    <path d="${path}" class="curve" fill="none" />
    ${points}
    ${band}
  </svg>`;
}

export function renderEstimatesPanel(est: Estimates, stale = false): string {
  const banner = stale
    ? `<div class="banner stale" data-testid="stale-banner">Showing last known estimates: refresh failed.</div>`
    : "";
  const probs = est.display.prob_tox;
  let table = "<p class='muted'>No toxicity estimates yet (escalation stage).</p>";
  if (probs && est.prob_tox) {
    const header = probs.map((_, i) => `<th>d${i + 1}</th>`).join("");
    const row = probs
      .map(
        (p, i) =>
          `<td data-testid="prob-tox-${i + 1}">${p === null ? "–" : escapeHtml(p)}</td>`,
      )
      .join("");
    table = `<table class="estimates"><thead><tr><th></th>${header}</tr></thead>
      <tbody><tr><th>R̂</th>${row}</tr></tbody></table>`;
  }
  let ciLine = "";
  if (est.ci && est.display.ci) {
    const [lo, hi] = est.display.ci;
    ciLine = `<div class="ci" data-testid="ci-line">${escapeHtml(
      est.ci.level,
    )} interval at dose ${est.ci.dose_index}: (<span data-testid="ci-lower">${escapeHtml(
      lo,
    )}</span>, <span data-testid="ci-upper">${escapeHtml(hi)}</span>)</div>`;
  }
  let aLine = "";
  if (est.display.a_hat) {
    aLine = `<div class="a-hat">parameter estimate <span data-testid="a-hat">${escapeHtml(
      est.display.a_hat,
    )}</span></div>`;
  }
  return `
  <div class="card estimates-panel" data-testid="estimates-panel">
    ${banner}
    <div class="k">Dose-toxicity estimates</div>
    ${chartSvg(est)}
    ${table}
    ${ciLine}
    ${aLine}
    ${renderModelWeights(est)}
  </div>`;
}

export function renderModelWeights(est: Estimates): string {
  const w = est.display.model_weights;
  if (!w || !est.model_weights) return "";
  const items = w
    .map(
      (v, i) =>
        `<li>member ${i + 1}: <span data-testid="model-weight-${i + 1}">${
          v === null ? "–" : escapeHtml(v)
        }</span></li>`,
    )
    .join("");
  return `<div class="model-weights" data-testid="model-weights"><div class="k">Model weights</div><ul>${items}</ul></div>`;
}

export function renderMsdPanel(est: Estimates): string {
  if (!est.msd || !est.display.msd_p_success) return "";
  const best = est.msd.best_dose;
  const cells = est.display.msd_p_success
    .map(
      (p, i) =>
        `<td data-testid="msd-p-${i + 1}" class="${
          i + 1 === best ? "msd-best" : ""
        }">${p === null ? "–" : escapeHtml(p)}</td>`,
    )
    .join("");
  const header = est.display.msd_p_success.map((_, i) => `<th>d${i + 1}</th>`).join("");
  return `
  <div class="card msd-panel" data-testid="msd-panel">
    <div class="k">Success probability (response without toxicity)</div>
    <table><thead><tr><th></th>${header}</tr></thead>
      <tbody><tr><th>P̂</th>${cells}</tr></tbody></table>
    <div class="msd-note">maximal at dose <span data-testid="msd-best">${best}</span></div>
  </div>`;
}

export function renderAuditTrail(events: AuditEvent[]): string {
  const items = events
    .map((e) => {
      const extra =
        e.type === "outcome_recorded"
          ? ` dose ${(e.outcome as HistoryRow)?.dose_index}, toxicity ${(e.outcome as HistoryRow)?.toxicity}`
          : e.type === "recommendation_issued"
            ? ` → dose ${(e.recommendation as Recommendation)?.dose_index}`
            : "";
      return `<li><span class="etype">${escapeHtml(e.type)}</span>${escapeHtml(extra)}</li>`;
    })
    .join("");
  return `<ol class="audit" data-testid="audit-trail" data-count="${events.length}">${items}</ol>`;
}

export interface FormFlags {
  closed: boolean;
  whatIf: boolean;
  needsGrade: boolean;
  hasGroups: boolean;
  hasResponse: boolean;
  recommendedDose: number | null;
}

export function renderOutcomeForm(flags: FormFlags): string {
  const dis = flags.closed ? "disabled" : "";
  const gradeField = `
      <label>Grade
        <select name="grade" ${dis}>
          <option value="">–</option>
          ${[0, 1, 2, 3, 4].map((g) => `<option value="${g}">${g}</option>`).join("")}
        </select>
      </label>`;
  const groupField = flags.hasGroups
    ? `<label>Group <select name="group" ${dis}><option value="0">0</option><option value="1">1</option></select></label>`
    : "";
  const responseField = flags.hasResponse
    ? `<label>Response <select name="response" ${dis}><option value="">–</option><option value="1">yes</option><option value="0">no</option></select></label>`
    : "";
  const note = flags.closed
    ? `<div class="banner closed" data-testid="closed-banner">Session is closed; no further outcomes can be entered.</div>`
    : "";
  return `
  <form class="card outcome-form" data-testid="outcome-form" data-disabled="${flags.closed}">
    ${note}
    <div class="k">${flags.whatIf ? "What-if exploration (not recorded)" : "Record patient outcome"}</div>
    <label>Dose
      <input name="dose_index" type="number" min="1" value="${flags.recommendedDose ?? 1}" ${dis} />
    </label>
    <label>Toxicity
      <select name="toxicity" ${dis}>
        <option value="0">no</option>
        <option value="1">yes</option>
      </select>
    </label>
    ${gradeField}
    ${groupField}
    ${responseField}
    <label class="override"><input name="override" type="checkbox" ${dis} /> override protocol dose</label>
    <label class="whatif-toggle"><input name="whatif" type="checkbox" ${flags.whatIf ? "checked" : ""} ${dis} /> what-if only</label>
    <button type="submit" ${dis} data-testid="submit-outcome">${
      flags.whatIf ? "Preview" : "Record"
    }</button>
  </form>`;
}

export function renderWhatIfPreview(
  rec: Recommendation | null,
  est: Estimates | null,
): string {
  if (!rec || !est) return "";
  return `
  <div class="card whatif-preview" data-testid="whatif-preview">
    <div class="k">What-if result (history unchanged)</div>
    ${renderRecommendation(rec)}
    ${renderEstimatesPanel(est)}
  </div>`;
}

export function renderErrorBanner(message: string | null, fields: string[] = []): string {
  if (!message) return "";
  const items = fields.map((f) => `<li>${escapeHtml(f)}</li>`).join("");
  return `<div class="banner error" data-testid="error-banner">${escapeHtml(message)}${
    items ? `<ul>${items}</ul>` : ""
  }</div>`;
}

export interface ViewState {
  session: SessionPayload | null;
  audit: AuditEvent[];
  whatIfMode: boolean;
  whatIfPreview: { recommendation: Recommendation; estimates: Estimates } | null;
  error: string | null;
  errorFields: string[];
  stale: boolean;
}

export function renderApp(state: ViewState): string {
  if (!state.session) {
    return `<div class="empty">${renderErrorBanner(state.error, state.errorFields)}
      <p>No session loaded. Enter a session id in the URL hash, e.g. <code>#session-id</code>.</p></div>`;
  }
  const s = state.session;
  const policy = s.config.policy as Record<string, unknown>;
  const flags: FormFlags = {
    closed: s.closed,
    whatIf: state.whatIfMode,
    needsGrade: s.stage === "stage_one",
    hasGroups: Boolean(policy.grouping),
    hasResponse: Boolean(policy.msd),
    recommendedDose: s.recommendation?.dose_index ?? null,
  };
  return `
  <div class="session" data-testid="session-view" data-session="${escapeHtml(s.id)}">
    <header>
      <h1>Dose-finding session <code>${escapeHtml(s.id)}</code></h1>
      ${renderStageBadge(s.stage)}
      <span class="patients">${s.patients} patients</span>
    </header>
    ${renderErrorBanner(state.error, state.errorFields)}
    <main>
      <section class="left">
        ${renderRecommendation(s.recommendation)}
        ${renderOutcomeForm(flags)}
        ${state.whatIfMode ? renderWhatIfPreview(state.whatIfPreview?.recommendation ?? null, state.whatIfPreview?.estimates ?? null) : ""}
      </section>
      <section class="right">
        ${renderEstimatesPanel(s.estimates, state.stale)}
        ${renderMsdPanel(s.estimates)}
        <div class="card">
          <div class="k">History</div>
          ${renderHistoryTable(s.history)}
        </div>
        <div class="card">
          <div class="k">Audit trail</div>
          ${renderAuditTrail(state.audit)}
        </div>
      </section>
    </main>
  </div>`;
}
