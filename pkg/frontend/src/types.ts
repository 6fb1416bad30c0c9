/** Wire types mirroring the job service's JSON documents. */

export type JobState = "created" | "masked" | "matched" | "running" | "done" | "failed";

export interface PerDimScores {
  stat: number;
  sem: number;
  pos: number;
  missing: string[];
}

export interface MatchEntry {
  content_cluster: number;
  style_image: string;
  style_cluster: number;
  score: number;
  per_dim: PerDimScores;
  origin: "auto" | "user_override";
}

export interface MaskSidecar {
  image_id: string;
  n_clusters: number;
  provenance: string;
  grid_shape: [number, number];
  config: Record<string, unknown>;
}

export interface JobDoc {
  id: string;
  state: JobState;
  config: {
    transfer: { lambda_c: number; opt_steps: number; [k: string]: unknown };
    cluster: { k_max: number; merge_threshold: number; [k: string]: unknown };
    [k: string]: unknown;
  };
  masks: Record<string, { sidecar: MaskSidecar }>;
  matches: { entries: MatchEntry[] } | null;
  progress: { step: number; total: number; last: unknown };
  style_images: string[];
  result_blob: string | null;
  error: string | null;
}

export interface ProgressEvent {
  type: "progress";
  step: number;
  rsl: number;
  gcl: number;
  total: number;
  percent: number;
}

export type StreamEvent =
  | ProgressEvent
  | { type: "done"; result_uri: string }
  | { type: "failed"; error: string };

export interface OverridePayload {
  content_cluster: number;
  style_image: string;
  style_cluster: number;
}
