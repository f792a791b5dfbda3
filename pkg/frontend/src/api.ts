/**
 * Typed client for the review service HTTP API.
 *
 * The UI talks to nothing else: every number it displays originates from
 * one of these endpoints.
 */

export interface ProviderSpec {
  kind: 'scripted' | 'stochastic' | 'http';
  fixtures_path?: string;
  sensitivity?: number;
  specificity?: number;
  seed?: number;
  base_url?: string;
  api_key?: string; // transient; sent once, never stored client- or server-side
}

export interface StartSessionBody {
  name: string;
  corpus_csv: string;
  frameworks: string[];
  provider: ProviderSpec;
  models: { lightweight: string; advanced: string };
}

export interface Tally {
  flagged: number;
  tp: number;
  fp: number;
  pending: number;
  ppv: number | null;
}

export interface SessionSummary {
  session_id: string;
  name: string;
  status: 'running' | 'complete' | 'failed';
  failure: string | null;
  frameworks: string[];
  corpus_name: string;
  corpus_size: number;
  created_at: string;
  progress: { completed: number; total: number };
  items: { total: number; pending: number; adjudicated: number };
  tallies: Record<string, Tally>;
  cost: Record<string, unknown>;
  comparison: Record<string, unknown> | null;
}

export interface ReviewItem {
  report_id: string;
  framework: string;
  modality: string;
  findings: string | null;
  impression: string | null;
  report_text: string | null;
  error: string;
  error_reason: string;
  status: 'pending' | 'adjudicated';
  decision: 'tp' | 'fp' | null;
  stage: 'first_reader' | 'second_reader' | null;
}

export interface VerdictBody {
  report_id: string;
  framework: string;
  decision: 'tp' | 'fp';
  reviewer_id: string;
  stage: 'first_reader' | 'second_reader';
}

export interface VerdictResponse {
  ok: boolean;
  verdict: VerdictBody & { timestamp: string };
  tallies: Record<string, Tally>;
}

/** Request failure carrying the HTTP status so callers can branch on 409. */
export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = 'ApiError';
  }
}

export class ApiClient {
  constructor(private baseUrl: string, private token?: string) {}

  private async request<T>(path: string, options: RequestInit = {}): Promise<T> {
    const headers: Record<string, string> = {
      'Content-Type': 'application/json',
    };
    if (this.token) {
      headers['Authorization'] = `Bearer ${this.token}`;
    }
    const response = await fetch(`${this.baseUrl}${path}`, { ...options, headers });
    if (!response.ok) {
      throw new ApiError(await describeFailure(response), response.status);
    }
    return response.json() as Promise<T>;
  }

  async startSession(body: StartSessionBody): Promise<{ session_id: string }> {
    return this.request('/sessions', { method: 'POST', body: JSON.stringify(body) });
  }

  async getSession(sessionId: string): Promise<SessionSummary> {
    return this.request(`/sessions/${sessionId}`);
  }

  async getItems(sessionId: string): Promise<{ items: ReviewItem[] }> {
    return this.request(`/sessions/${sessionId}/items`);
  }

  async postVerdict(sessionId: string, body: VerdictBody): Promise<VerdictResponse> {
    return this.request(`/sessions/${sessionId}/verdicts`, {
      method: 'POST',
      body: JSON.stringify(body),
    });
  }
}

/** Server errors arrive as {"detail": reason}; fall back to the status line. */
async function describeFailure(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === 'string') {
      return body.detail;
    }
  } catch {
    // non-JSON body; use the status text below
  }
  return `${response.status} ${response.statusText}`.trim();
}
