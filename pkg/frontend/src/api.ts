// Typed client for the study service API. The fetch implementation is
// injectable so tests can swap in fakes or point at a different origin.

export type Verdict = "real" | "wax";

export interface SessionInfo {
  session_id: string;
  volunteer: string;
  total: number;
  created_at: string;
}

export interface TrialItem {
  done: false;
  face_id: string;
  image_url: string;
  index: number;
  total: number;
}

export interface DoneMarker {
  done: true;
  total: number;
}

export type NextItem = TrialItem | DoneMarker;

export interface DecisionAck {
  accepted: boolean;
  index: number;
  total: number;
}

export interface ReportCounts {
  attack_total: number;
  attack_errors: number;
  bona_total: number;
  bona_errors: number;
}

export interface SessionReport {
  session_id: string;
  volunteer: string;
  total: number;
  counts: ReportCounts;
  apcer_pct: string;
  bpcer_pct: string;
  acer_pct: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class StudyApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(volunteer: string, seed?: number): Promise<SessionInfo> {
    return this.request<SessionInfo>("/api/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(seed === undefined ? { volunteer } : { volunteer, seed }),
    });
  }

  nextItem(sessionId: string): Promise<NextItem> {
    return this.request<NextItem>(`/api/sessions/${sessionId}/next`);
  }

  submitDecision(
    sessionId: string,
    faceId: string,
    verdict: Verdict,
    elapsedMs: number,
  ): Promise<DecisionAck> {
    return this.request<DecisionAck>(`/api/sessions/${sessionId}/decisions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ face_id: faceId, verdict, elapsed_ms: Math.round(elapsedMs) }),
    });
  }

  sessionReport(sessionId: string): Promise<SessionReport> {
    return this.request<SessionReport>(`/api/sessions/${sessionId}/report`);
  }

  imageUrl(relative: string): string {
    return this.baseUrl + relative;
  }
}
