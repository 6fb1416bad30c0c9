/**
 * Studio view-model. All state is derived from the job document and the
 * event stream, so a reload mid-run reconstructs the exact same view; the
 * store performs no pipeline math.
 */

import { pointFromEvent, type ChartPoint } from "./chart.js";
import type { ApiError, StudioApi } from "./api.js";
import type { JobDoc, MatchEntry, OverridePayload, StreamEvent } from "./types.js";

export type Mode = "auto" | "custom";

export interface SliderValues {
  lambda_c: number;
  k_max: number;
  merge_threshold: number;
}

export const SLIDER_DEFAULTS: SliderValues = {
  lambda_c: 0.26,
  k_max: 10,
  merge_threshold: 0.85,
};

export interface StudioState {
  job: JobDoc | null;
  mode: Mode;
  selectedContentCluster: number | null;
  selectedStyle: { image: string; cluster: number } | null;
  pendingOverrides: OverridePayload[];
  sliders: SliderValues;
  chart: ChartPoint[];
  finished: boolean;
  error: string | null;
}

type Listener = (state: StudioState) => void;

export class StudioStore {
  private state: StudioState = {
    job: null,
    mode: "auto",
    selectedContentCluster: null,
    selectedStyle: null,
    pendingOverrides: [],
    sliders: { ...SLIDER_DEFAULTS },
    chart: [],
    finished: false,
    error: null,
  };
  private listeners: Listener[] = [];

  constructor(private readonly api: StudioApi) {}

  getState(): StudioState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private update(patch: Partial<StudioState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  // -- job lifecycle ---------------------------------------------------------

  setJob(job: JobDoc): void {
    const sliders: SliderValues = {
      lambda_c: job.config.transfer.lambda_c ?? SLIDER_DEFAULTS.lambda_c,
      k_max: job.config.cluster.k_max ?? SLIDER_DEFAULTS.k_max,
      merge_threshold: job.config.cluster.merge_threshold ?? SLIDER_DEFAULTS.merge_threshold,
    };
    this.update({
      job,
      sliders,
      pendingOverrides: this.state.pendingOverrides.filter((o) =>
        overrideValid(o, job),
      ),
    });
  }

  setMode(mode: Mode): void {
    // Auto mode hides overrides and runs with server defaults.
    this.update({
      mode,
      pendingOverrides: mode === "auto" ? [] : this.state.pendingOverrides,
      selectedContentCluster: null,
      selectedStyle: null,
    });
  }

  setSlider<K extends keyof SliderValues>(key: K, value: number): void {
    this.update({ sliders: { ...this.state.sliders, [key]: value } });
  }

  // -- override click flow ---------------------------------------------------

  clickContentCluster(clusterId: number): void {
    const job = this.state.job;
    if (!job || this.state.mode !== "custom") return;
    const sidecar = job.masks["content"]?.sidecar;
    if (!sidecar || clusterId < 0 || clusterId >= sidecar.n_clusters) {
      this.update({ error: `content cluster ${clusterId} not in current mask` });
      return;
    }
    this.update({ selectedContentCluster: clusterId, error: null });
    this.maybeCompleteOverride();
  }

  clickStyleCluster(image: string, clusterId: number): void {
    const job = this.state.job;
    if (!job || this.state.mode !== "custom") return;
    const sidecar = job.masks[image]?.sidecar;
    if (!sidecar || clusterId < 0 || clusterId >= sidecar.n_clusters) {
      this.update({ error: `style cluster ${image}/${clusterId} not in current mask` });
      return;
    }
    this.update({ selectedStyle: { image, cluster: clusterId }, error: null });
    this.maybeCompleteOverride();
  }

  private maybeCompleteOverride(): void {
    const { selectedContentCluster, selectedStyle } = this.state;
    if (selectedContentCluster === null || selectedStyle === null) return;
    const override: OverridePayload = {
      content_cluster: selectedContentCluster,
      style_image: selectedStyle.image,
      style_cluster: selectedStyle.cluster,
    };
    const others = this.state.pendingOverrides.filter(
      (o) => o.content_cluster !== override.content_cluster,
    );
    this.update({
      pendingOverrides: [...others, override],
      selectedContentCluster: null,
      selectedStyle: null,
    });
  }

  removeOverride(contentCluster: number): void {
    this.update({
      pendingOverrides: this.state.pendingOverrides.filter(
        (o) => o.content_cluster !== contentCluster,
      ),
    });
  }

  /** The exact PUT body for /jobs/{id}/matches. */
  overridePutBody(): { overrides: OverridePayload[] } {
    return { overrides: [...this.state.pendingOverrides] };
  }

  /** Per-dimension scores of the auto match for a hovered content cluster. */
  matchForCluster(contentCluster: number): MatchEntry | null {
    const entries = this.state.job?.matches?.entries ?? [];
    return entries.find((e) => e.content_cluster === contentCluster) ?? null;
  }

  // -- actions against the service --------------------------------------------

  async applyAndRun(): Promise<void> {
    const job = this.state.job;
    if (!job) return;
    try {
      if (this.state.mode === "custom" && this.state.pendingOverrides.length > 0) {
        this.setJob(await this.api.putOverrides(job.id, this.overridePutBody().overrides));
      }
      this.update({ chart: [], finished: false });
      this.setJob(await this.api.run(job.id));
      this.update({ error: null });
    } catch (err) {
      await this.surface(err);
    }
  }

  /** Rebuild the whole view from the API alone (used on load and reload). */
  async reconstruct(jobId: string, signal?: AbortSignal): Promise<void> {
    this.update({ chart: [], finished: false, error: null });
    this.setJob(await this.api.getJob(jobId));
    const job = this.state.job;
    if (!job) return;
    if (job.state === "running" || job.state === "done" || job.state === "failed") {
      await this.api.streamEvents(jobId, (event) => this.onEvent(event), signal);
    }
  }

  onEvent(event: StreamEvent): void {
    if (event.type === "progress") {
      // replayed history arrives in order; drop duplicates on reconnect
      const last = this.state.chart[this.state.chart.length - 1];
      if (last && event.step <= last.step) return;
      this.update({ chart: [...this.state.chart, pointFromEvent(event)] });
    } else if (event.type === "done") {
      this.update({ finished: true });
    } else {
      this.update({ finished: true, error: event.error });
    }
  }

  private async surface(err: unknown): Promise<void> {
    const apiErr = err as ApiError;
    if (apiErr && typeof apiErr.status === "number" && apiErr.status === 409 && this.state.job) {
      // stale state: refresh the job and let the user retry
      try {
        this.setJob(await this.api.getJob(this.state.job.id));
      } catch {
        /* keep the original error */
      }
    }
    this.update({ error: apiErr?.message ?? String(err) });
  }
}

function overrideValid(override: OverridePayload, job: JobDoc): boolean {
  const content = job.masks["content"]?.sidecar;
  const style = job.masks[override.style_image]?.sidecar;
  if (!content || !style) return false;
  return (
    override.content_cluster >= 0 &&
    override.content_cluster < content.n_clusters &&
    override.style_cluster >= 0 &&
    override.style_cluster < style.n_clusters
  );
}
