/**
 * Shared test scaffolding: DOM mounting, async settling, and a scriptable
 * fetch stub for driving the console without a live server.
 */

import { ReviewItem, SessionSummary, Tally } from '../src/api.js';

export const BASE_URL = 'http://review.test';

export function mountApp(): HTMLElement {
  document.body.innerHTML = '<div id="app"></div>';
  return document.getElementById('app') as HTMLElement;
}

export async function waitFor(check: () => boolean, timeoutMs = 5000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!check()) {
    if (Date.now() > deadline) {
      throw new Error('condition not met in time');
    }
    await sleep(10);
  }
}

export function waitForEvent(name: string, timeoutMs = 5000): Promise<CustomEvent> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error(`no ${name} event within ${timeoutMs}ms`)), timeoutMs);
    document.addEventListener(
      name,
      (event) => {
        clearTimeout(timer);
        resolve(event as CustomEvent);
      },
      { once: true },
    );
  });
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Attach a CSV to the console's file input; jsdom has no file picker. */
export function setCorpusFile(text: string, name = 'corpus.csv'): void {
  const input = document.getElementById('corpus-file') as HTMLInputElement;
  const file = new File([text], name, { type: 'text/csv' });
  Object.defineProperty(input, 'files', { value: [file], configurable: true });
}

export function submitConsoleForm(): void {
  const form = document.getElementById('start-form') as HTMLFormElement;
  form.dispatchEvent(new Event('submit', { bubbles: true, cancelable: true }));
}

export function setInput(id: string, value: string): void {
  const input = document.getElementById(id) as HTMLInputElement | HTMLSelectElement;
  input.value = value;
  input.dispatchEvent(new Event('change', { bubbles: true }));
}

export interface RecordedCall {
  key: string;
  body: Record<string, unknown> | null;
}

export type RouteResult = { status?: number; json: unknown };
export type RouteHandler = (
  body: Record<string, unknown> | null,
  url: URL,
) => RouteResult | Promise<RouteResult>;

/**
 * Replace global fetch with a router keyed by "METHOD /path".  Returns the
 * call log; unknown routes answer 404 so a missing stub fails loudly.
 */
export function installMockFetch(routes: Record<string, RouteHandler>): RecordedCall[] {
  const calls: RecordedCall[] = [];
  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = new URL(String(input));
    const method = (init?.method ?? 'GET').toUpperCase();
    const key = `${method} ${url.pathname}`;
    const body = init?.body ? (JSON.parse(String(init.body)) as Record<string, unknown>) : null;
    calls.push({ key, body });
    const handler = routes[key];
    if (!handler) {
      return jsonResponse(404, { detail: `no stubbed route: ${key}` });
    }
    const result = await handler(body, url);
    return jsonResponse(result.status ?? 200, result.json);
  }) as typeof fetch;
  return calls;
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

export function tallyFixture(overrides: Partial<Tally> = {}): Tally {
  return { flagged: 0, tp: 0, fp: 0, pending: 0, ppv: null, ...overrides };
}

export function itemFixture(overrides: Partial<ReviewItem> = {}): ReviewItem {
  return {
    report_id: 'r01',
    framework: 'f1',
    modality: 'xray',
    findings: 'Lungs are clear.',
    impression: 'No acute disease.',
    report_text: 'FINDINGS: Lungs are clear.\n\nIMPRESSION: No acute disease.',
    error: 'laterality mismatch',
    error_reason: 'findings describe the left side, impression the right',
    status: 'pending',
    decision: null,
    stage: null,
    ...overrides,
  };
}

export function summaryFixture(overrides: Partial<SessionSummary> = {}): SessionSummary {
  return {
    session_id: 'abc123',
    name: 'fixture session',
    status: 'complete',
    failure: null,
    frameworks: ['f1'],
    corpus_name: 'corpus',
    corpus_size: 5,
    created_at: '2026-08-16T00:00:00+00:00',
    progress: { completed: 5, total: 5 },
    items: { total: 2, pending: 2, adjudicated: 0 },
    tallies: { f1: tallyFixture({ flagged: 2, pending: 2 }) },
    cost: {},
    comparison: null,
    ...overrides,
  };
}
