// Thin typed client over the trial-service HTTP API. The fetch function is
// injectable so tests can replay captured response bodies byte for byte.

import type {
  ApiErrorBody,
  AuditEvent,
  DesignDocument,
  OutcomeForm,
  OutcomeResponse,
  SessionPayload,
  WhatIfResponse,
  Estimates,
  Recommendation,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  status: number;
  fieldErrors: string[];

  constructor(status: number, body: ApiErrorBody) {
    super(body.error);
    this.status = status;
    this.fieldErrors = body.field_errors ?? [];
  }
}

export class ApiClient {
  private base: string;
  private fetchFn: FetchLike;

  constructor(base = "", fetchFn: FetchLike = (u, i) => fetch(u, i)) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    const text = await res.text();
    const body = text ? JSON.parse(text) : {};
    if (!res.ok) {
      throw new ApiError(res.status, body as ApiErrorBody);
    }
    return body as T;
  }

  createSession(design: DesignDocument): Promise<SessionPayload> {
    return this.request("/sessions", {
      method: "POST",
      body: JSON.stringify(design),
    });
  }

  getSession(id: string): Promise<SessionPayload> {
    return this.request(`/sessions/${id}`);
  }

  postOutcome(id: string, outcome: OutcomeForm): Promise<OutcomeResponse> {
    return this.request(`/sessions/${id}/outcomes`, {
      method: "POST",
      body: JSON.stringify(outcome),
    });
  }

  whatIf(id: string, outcome: OutcomeForm): Promise<WhatIfResponse> {
    return this.request(`/sessions/${id}/what-if`, {
      method: "POST",
      body: JSON.stringify(outcome),
    });
  }

  getEstimates(id: string): Promise<Estimates> {
    return this.request(`/sessions/${id}/estimates`);
  }

  getRecommendation(id: string): Promise<Recommendation> {
    return this.request(`/sessions/${id}/recommendation`);
  }

  async getAudit(id: string): Promise<AuditEvent[]> {
    const body = await this.request<{ events: AuditEvent[] }>(
      `/sessions/${id}/audit`,
    );
    return body.events;
  }

  closeSession(id: string): Promise<SessionPayload> {
    return this.request(`/sessions/${id}/close`, { method: "POST" });
  }
}
