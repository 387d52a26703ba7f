// Payload shapes mirroring the trial service API. The UI renders these
// verbatim and performs no numerical computation of its own.

export interface HistoryRow {
  dose_index: number;
  toxicity: number;
  grade: number | null;
  group: number | null;
  response: number | null;
}

export interface Recommendation {
  dose_index: number;
  rationale: string;
  estimate_kind: string;
  stage: string;
  patients: number;
  by_group?: number[];
  randomized_from?: number;
}

export interface CiPayload {
  level: number;
  dose_index: number;
  lower: number;
  upper: number;
}

export interface MsdPayload {
  best_dose: number;
  p_success: number[];
  prob_tox: number[];
  prob_resp: number[];
  tox_param: number;
  resp_param: number;
}

export interface DisplayStrings {
  prob_tox?: (string | null)[];
  ci?: (string | null)[];
  a_hat?: string | null;
  model_weights?: (string | null)[];
  msd_p_success?: (string | null)[];
}

export interface Estimates {
  target: number;
  stage: string;
  kind: string | null;
  a_hat: number | null;
  param_mean: number | null;
  param_mode: number | null;
  normalizer: number | null;
  prob_tox: number[] | null;
  prob_tox_plugin: number[] | null;
  ci: CiPayload | null;
  model_weights: number[] | null;
  msd: MsdPayload | null;
  display: DisplayStrings;
}

export interface SessionPayload {
  id: string;
  stage: string;
  closed: boolean;
  config: DesignDocument;
  patients: number;
  history: HistoryRow[];
  recommendation: Recommendation | null;
  estimates: Estimates;
}

export interface OutcomeResponse {
  recommendation: Recommendation;
  estimates: Estimates;
  stage: string;
  closed: boolean;
}

export interface WhatIfResponse {
  recommendation: Recommendation;
  estimates: Estimates;
}

export interface AuditEvent {
  type: string;
  time?: string;
  [key: string]: unknown;
}

export interface DesignDocument {
  skeleton: { alpha: number[]; doses?: unknown[] };
  model: { kind: string; bounds?: number[] };
  policy: Record<string, unknown> & { target: number };
  ci_level?: number;
  max_patients?: number;
  seed?: number;
}

export interface OutcomeForm {
  dose_index: number;
  toxicity: number;
  grade?: number;
  group?: number;
  response?: number;
  override?: boolean;
}

export interface ApiErrorBody {
  error: string;
  field_errors?: string[];
}
