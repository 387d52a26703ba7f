// Fixture loading and a recording fetch stub for the UI tests. Fixtures are
// verbatim response bodies captured from the real trial service.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export function fixtureText(name: string): string {
  return readFileSync(join(FIXTURES, name), "utf-8");
}

export function fixture<T>(name: string): T {
  return JSON.parse(fixtureText(name)) as T;
}

export interface RecordedCall {
  method: string;
  path: string;
  body: unknown;
}

export type Route = (call: RecordedCall) => { status?: number; body: string } | null;

export function makeFetch(route: Route, calls: RecordedCall[] = []) {
  const fetchLike = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? "GET";
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    const call = { method, path, body };
    calls.push(call);
    const matched = route(call);
    if (!matched) {
      return new Response(JSON.stringify({ error: `no route for ${method} ${path}` }), {
        status: 500,
        headers: { "content-type": "application/json" },
      });
    }
    return new Response(matched.body, {
      status: matched.status ?? 200,
      headers: { "content-type": "application/json" },
    });
  };
  return { fetchLike, calls };
}
