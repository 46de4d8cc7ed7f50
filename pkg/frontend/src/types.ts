/** Shapes of the labeling service's JSON responses. */

export interface SessionState {
  kappa: number;
  kappa_max: number;
  spent: number;
  cap: number;
  pending_count: number;
  revision: number;
  num_classes: number;
}

export interface QueueItem {
  sample_id: string;
  asset_uri: string | null;
  suggested_label: number | null;
}

export interface LabelResult {
  accepted: boolean;
  remaining: number;
  revision: number;
}

export interface MetricsEntry {
  kappa: number;
  bcubed_precision: number | null;
  eval_top1: number | null;
  eval_mean_class: number | null;
}

export interface ProjectionPoint {
  id: string;
  x: number;
  y: number;
  labeled: boolean;
  pending: boolean;
  label: number | null;
}

/** Thrown by the API client for non-2xx responses. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface LabelingApi {
  getState(): Promise<SessionState>;
  getQueue(): Promise<QueueItem[]>;
  getMetrics(): Promise<MetricsEntry[]>;
  getProjection(): Promise<ProjectionPoint[]>;
  postLabel(sampleId: string, label: number, revision?: number): Promise<LabelResult>;
}
