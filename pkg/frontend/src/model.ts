import {
  ApiError,
  LabelingApi,
  MetricsEntry,
  ProjectionPoint,
  QueueItem,
  SessionState,
} from "./types.js";

export type Status = "loading" | "labeling" | "advancing" | "complete";

export interface Toast {
  kind: "error" | "info";
  message: string;
}

/**
 * View model for the labeling screen.
 *
 * Holds the latest server responses plus the optimistic in-flight submit.
 * Every number shown in the UI comes from a server response field; the only
 * optimistic effect is hiding the current queue item while its label is in
 * flight, and a rejected submit restores it.
 */
export class AppModel {
  state: SessionState | null = null;
  queue: QueueItem[] = [];
  metrics: MetricsEntry[] = [];
  projection: ProjectionPoint[] = [];
  toasts: Toast[] = [];
  busy = false;

  private listeners: Array<() => void> = [];

  constructor(private readonly api: LabelingApi) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) {
      listener();
    }
  }

  // ------------------------------------------------------------- derived

  current(): QueueItem | null {
    return this.queue.length ? this.queue[0] : null;
  }

  status(): Status {
    if (!this.state) {
      return "loading";
    }
    if (this.queue.length || this.busy) {
      return "labeling";
    }
    return this.state.kappa >= this.state.kappa_max ? "complete" : "advancing";
  }

  numClasses(): number {
    return this.state ? this.state.num_classes : 0;
  }

  canLabel(label: number): boolean {
    return (
      !this.busy &&
      this.current() !== null &&
      this.state !== null &&
      Number.isInteger(label) &&
      label >= 0 &&
      label < this.state.num_classes
    );
  }

  /** Budget consumed, as a fraction of the cap (for the progress bar). */
  progressFraction(): number {
    if (!this.state || this.state.cap === 0) {
      return 0;
    }
    return this.state.spent / this.state.cap;
  }

  /** Per-step series for sparklines; length always equals kappa. */
  series(key: "bcubed_precision" | "eval_top1"): Array<number | null> {
    return this.metrics.map((entry: MetricsEntry) => entry[key]);
  }

  neighborhood(): ProjectionPoint[] {
    return this.projection;
  }

  // -------------------------------------------------------------- actions

  async refresh(): Promise<void> {
    const [state, queue, metrics] = await Promise.all([
      this.api.getState(),
      this.api.getQueue(),
      this.api.getMetrics(),
    ]);
    this.state = state;
    this.queue = queue;
    this.metrics = metrics;
    this.projection = await this.api.getProjection();
    this.notify();
  }

  /**
   * Submit a label for the current queue item: optimistically pop it, then
   * reconcile with the server response (restore it on rejection).
   */
  async chooseLabel(label: number): Promise<void> {
    if (!this.canLabel(label) || !this.state) {
      return;
    }
    const item = this.queue.shift() as QueueItem;
    const revision = this.state.revision;
    this.busy = true;
    this.notify();
    try {
      await this.api.postLabel(item.sample_id, label, revision);
      this.busy = false;
      await this.refresh();
    } catch (error) {
      this.busy = false;
      this.queue.unshift(item);
      const message =
        error instanceof ApiError
          ? `submit rejected (${error.status}): ${error.detail}`
          : `submit failed: ${String(error)}`;
      this.toasts.push({ kind: "error", message });
      try {
        await this.refresh();
      } catch {
        this.notify();
      }
    }
  }

  dismissToast(index: number): void {
    this.toasts.splice(index, 1);
    this.notify();
  }
}
