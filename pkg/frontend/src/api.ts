/** Typed client for the annotation service HTTP API. */

export interface Progress {
  done: number;
  total: number;
}

export interface SampleView {
  sample_id: string;
  llm_response: string;
  reference_answer: string;
  judge_decision?: string;
  judge_explanation?: string;
  round1_decision?: string;
}

export interface NextPayload {
  session_id: string;
  round: number;
  annotator_id: string;
  progress: Progress;
  finished: boolean;
  sample: SampleView | null;
}

export interface DecisionAck {
  ok: boolean;
  sample_id: string;
  decided_at: string;
  progress: Progress;
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

/** Raised on HTTP 409: the decision already exists or the round is not open yet. */
export class ConflictError extends ApiError {
  constructor(message: string) {
    super(409, message);
    this.name = "ConflictError";
  }
}

async function requestJson<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const body: unknown = await response.json();
      if (
        typeof body === "object" &&
        body !== null &&
        typeof (body as { detail?: unknown }).detail === "string"
      ) {
        detail = (body as { detail: string }).detail;
      }
    } catch {
      // non-JSON error body, keep the generic message
    }
    if (response.status === 409) {
      throw new ConflictError(detail);
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

/** Minimal surface the view layer depends on; lets tests inject a scripted client. */
export interface AnnotationClient {
  fetchNext(sessionId: string): Promise<NextPayload>;
  submitDecision(sessionId: string, sampleId: string, decision: string): Promise<DecisionAck>;
}

export class AnnotationApi implements AnnotationClient {
  private readonly baseUrl: string;

  constructor(baseUrl = "") {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  fetchNext(sessionId: string): Promise<NextPayload> {
    const url = `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/next`;
    return requestJson<NextPayload>(url);
  }

  submitDecision(sessionId: string, sampleId: string, decision: string): Promise<DecisionAck> {
    const url = `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/decisions`;
    return requestJson<DecisionAck>(url, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ sample_id: sampleId, decision }),
    });
  }
}
