import {
  ApiError,
  LabelResult,
  LabelingApi,
  MetricsEntry,
  ProjectionPoint,
  QueueItem,
  SessionState,
} from "./types.js";

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (response.ok) {
    return (await response.json()) as T;
  }
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") {
      detail = body.detail;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, detail);
}

/** fetch-based client for the labeling service. */
export class HttpLabelingApi implements LabelingApi {
  constructor(private readonly base: string = "") {}

  getState(): Promise<SessionState> {
    return this.get<SessionState>("/api/state");
  }

  getQueue(): Promise<QueueItem[]> {
    return this.get<QueueItem[]>("/api/queue");
  }

  getMetrics(): Promise<MetricsEntry[]> {
    return this.get<MetricsEntry[]>("/api/metrics");
  }

  getProjection(): Promise<ProjectionPoint[]> {
    return this.get<ProjectionPoint[]>("/api/projection");
  }

  async postLabel(
    sampleId: string,
    label: number,
    revision?: number,
  ): Promise<LabelResult> {
    const headers: Record<string, string> = {
      "Content-Type": "application/json",
    };
    if (revision !== undefined) {
      headers["If-Match"] = String(revision);
    }
    const response = await fetch(`${this.base}/api/labels`, {
      method: "POST",
      headers,
      body: JSON.stringify({ sample_id: sampleId, label }),
    });
    return parseOrThrow<LabelResult>(response);
  }

  private async get<T>(path: string): Promise<T> {
    return parseOrThrow<T>(await fetch(this.base + path));
  }
}
