/**
 * Typed client for the audit service JSON API.
 *
 * Every screen talks to the server through this module only; nothing
 * here touches the DOM.
 */

export interface ReviewCard {
  review_id: string;
  app_id: string;
  title: string;
  body: string;
  rating: number | null;
  date: string | null;
}

export interface AnnotationOut {
  review_id: string;
  annotator_id: string;
  convincingness: number;
  severity: number;
  alarmingness: number;
}

export interface MergedAnnotation {
  review_id: string;
  convincingness: number;
  severity: number;
  alarmingness: number;
  resolved: boolean;
}

export interface RankedApp {
  app_id: string;
  name: string;
  weighted_mean: number;
  bucket3_count: number;
  normalized_count: number;
  exploitable_score: number;
  rank: number;
  verdict: string | null;
}

export interface AlarmingReview extends ReviewCard {
  alarmingness: number;
}

export type VerdictState = "confirmed_exploitable" | "rejected" | "pending";

export interface AppVerdict {
  app_id: string;
  verdict: VerdictState;
  auditor_id: string;
  notes: string;
  evidence_review_ids: string[];
  timestamp: string;
}

export interface Job {
  job_id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  progress: number;
  artifacts: string[];
  error: string | null;
  params: Record<string, unknown>;
}

export interface Health {
  status: string;
  corpus: boolean;
  scores: boolean;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

/** Flatten a FastAPI error payload (string or field-error list) to text. */
function detailText(payload: unknown): string {
  if (payload && typeof payload === "object" && "detail" in payload) {
    const detail = (payload as { detail: unknown }).detail;
    if (typeof detail === "string") return detail;
    if (Array.isArray(detail)) {
      return detail
        .map((d) => {
          const loc = Array.isArray(d.loc) ? d.loc.join(".") : "";
          return loc ? `${loc}: ${d.msg}` : String(d.msg);
        })
        .join("; ");
    }
  }
  return "request failed";
}

// The server already strips rater-facing reviewer labels; the client
// refuses to render a payload where they somehow reappear.
const REVIEWER_IDENTITY_FIELDS = ["reviewer_type", "story_type"];

export function assertNoReviewerIdentifiers(rows: object[]): void {
  for (const row of rows) {
    for (const field of REVIEWER_IDENTITY_FIELDS) {
      if (field in row) {
        throw new Error(`server leaked reviewer identifier field: ${field}`);
      }
    }
  }
}

export class ApiClient {
  constructor(
    private base = "",
    private token: string | null = null,
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<{ status: number; data: T }> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const response = await fetch(`${this.base}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const data = text ? JSON.parse(text) : null;
    if (!response.ok) {
      throw new ApiError(response.status, detailText(data));
    }
    return { status: response.status, data: data as T };
  }

  async health(): Promise<Health> {
    return (await this.request<Health>("GET", "/api/health")).data;
  }

  async registerAnnotator(annotatorId: string): Promise<void> {
    await this.request("POST", "/api/annotators", { annotator_id: annotatorId });
  }

  async queue(annotatorId: string, n: number): Promise<ReviewCard[]> {
    const { data } = await this.request<ReviewCard[]>(
      "GET",
      `/api/reviews/queue?annotator=${encodeURIComponent(annotatorId)}&n=${n}`,
    );
    assertNoReviewerIdentifiers(data);
    return data;
  }

  async submitAnnotation(
    reviewId: string,
    annotatorId: string,
    convincingness: number,
    severity: number,
  ): Promise<AnnotationOut> {
    const { data } = await this.request<AnnotationOut>("POST", "/api/annotations", {
      review_id: reviewId,
      annotator_id: annotatorId,
      convincingness,
      severity,
    });
    return data;
  }

  async needsDiscussion(): Promise<MergedAnnotation[]> {
    return (await this.request<MergedAnnotation[]>(
      "GET",
      "/api/annotations/needs-discussion",
    )).data;
  }

  async resolve(
    reviewId: string,
    convincingness: number,
    severity: number,
  ): Promise<MergedAnnotation> {
    const { data } = await this.request<MergedAnnotation>(
      "POST",
      "/api/annotations/resolve",
      { review_id: reviewId, convincingness, severity },
    );
    return data;
  }

  async ranked(limit?: number): Promise<RankedApp[]> {
    const query = limit === undefined ? "" : `?limit=${limit}`;
    return (await this.request<RankedApp[]>("GET", `/api/apps/ranked${query}`)).data;
  }

  async alarming(appId: string, k = 50, min = 2): Promise<AlarmingReview[]> {
    const { data } = await this.request<AlarmingReview[]>(
      "GET",
      `/api/apps/${encodeURIComponent(appId)}/alarming?k=${k}&min=${min}`,
    );
    assertNoReviewerIdentifiers(data);
    return data;
  }

  async getVerdict(appId: string): Promise<AppVerdict | null> {
    return (await this.request<AppVerdict | null>(
      "GET",
      `/api/apps/${encodeURIComponent(appId)}/verdict`,
    )).data;
  }

  async postVerdict(
    appId: string,
    verdict: VerdictState,
    auditorId: string,
    evidenceReviewIds: string[],
    notes = "",
  ): Promise<AppVerdict> {
    const { data } = await this.request<AppVerdict>(
      "POST",
      `/api/apps/${encodeURIComponent(appId)}/verdict`,
      {
        verdict,
        auditor_id: auditorId,
        evidence_review_ids: evidenceReviewIds,
        notes,
      },
    );
    return data;
  }

  async startJob(kind: string): Promise<Job> {
    return (await this.request<Job>("POST", "/api/jobs", { kind })).data;
  }

  async job(jobId: string): Promise<Job> {
    return (await this.request<Job>("GET", `/api/jobs/${jobId}`)).data;
  }
}
