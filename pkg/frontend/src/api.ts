/**
 * Typed client for the review-service JSON API (see docs/api.md in the
 * repository root). The dashboard consumes this API exclusively; every
 * number rendered on screen comes from one of these payloads.
 */

export type AnchorHit = "none" | "start_code" | "end_code";
export type Polarity = "risk_increasing" | "risk_decreasing";
export type EvidenceSource = "global" | "group" | "anchor";
export type Complication = "none" | "GHT" | "GDB";
export type CaseStatus = "pending" | "reviewed";

export interface Demographics {
  patient_id: string;
  age: number;
  sex: string;
  race: string;
}

export interface Prediction {
  p_none: number;
  p_ght: number;
  p_gdb: number;
  predicted: Complication;
  history_group: string;
}

export interface EvidenceItem {
  concept_id: number | null;
  feature_name: string;
  window: number | null;
  weight: number;
  polarity: Polarity;
  source: EvidenceSource;
}

export interface CaseSummary {
  patient_id: string;
  status: CaseStatus;
  surfaced_at: number;
  demographics: Demographics;
  prediction: Prediction;
  start_source: string;
}

export interface CasePage {
  cases: CaseSummary[];
  page: number;
  page_size: number;
  total: number;
}

export interface TimelineWeek {
  week: number;
  as_of: string;
  f: number;
  q_smooth: number;
  y_hat: number;
  anchor_hit: AnchorHit;
}

export interface Timeline {
  patient_id: string;
  clock_week: number;
  weeks: TimelineWeek[];
  inferred_start_week: number | null;
  inferred_end_week: number | null;
}

export interface EvidencePayload {
  patient_id: string;
  surfaced_at: number;
  status: CaseStatus;
  demographics: Demographics;
  prediction: Prediction;
  evidence: EvidenceItem[];
}

export interface Clock {
  week: number;
  date: string;
  end_week: number;
}

export interface DecisionRequest {
  call: boolean;
  predicted_complication: Complication;
  note: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message?: string,
  ) {
    super(message ?? `API error ${status} (${code})`);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "unknown";
  try {
    const body = await response.json();
    if (body && typeof body.detail === "object" && body.detail?.code) {
      code = body.detail.code;
    } else if (Array.isArray(body?.detail)) {
      code = "validation_error";
    }
  } catch {
    /* non-JSON body */
  }
  return new ApiError(response.status, code);
}

export class ReviewApi {
  constructor(readonly baseUrl: string) {}

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(`${this.baseUrl}/api/v1${path}`);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}/api/v1${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  clock(): Promise<Clock> {
    return this.get("/clock");
  }

  advanceClock(weeks: number): Promise<Clock & { newly_surfaced: string[] }> {
    return this.post("/clock/advance", { weeks });
  }

  listCases(status?: CaseStatus, page = 0, pageSize = 50): Promise<CasePage> {
    const query = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (status) query.set("status", status);
    return this.get(`/cases?${query}`);
  }

  timeline(patientId: string): Promise<Timeline> {
    return this.get(`/patients/${encodeURIComponent(patientId)}/timeline`);
  }

  evidence(patientId: string): Promise<EvidencePayload> {
    return this.get(`/patients/${encodeURIComponent(patientId)}/evidence`);
  }

  submitDecision(patientId: string, decision: DecisionRequest): Promise<{ status: string }> {
    return this.post(`/patients/${encodeURIComponent(patientId)}/decision`, decision);
  }
}
