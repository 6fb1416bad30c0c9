/** Typed client for the job service; every pixel and number shown in the
 * studio originates from these responses. */

import { decodeMaskPng, type LabelGrid } from "./png16.js";
import type { JobDoc, OverridePayload, StreamEvent } from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

export class StudioApi {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(`${this.base}${path}`, init);
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = await response.json();
        detail = body.error ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(detail, response.status);
    }
    return response;
  }

  async getJob(jobId: string): Promise<JobDoc> {
    return (await this.request(`/jobs/${jobId}`)).json();
  }

  async computeMasks(jobId: string): Promise<JobDoc> {
    return (await this.request(`/jobs/${jobId}/masks`, { method: "POST" })).json();
  }

  async previewMatches(jobId: string): Promise<JobDoc> {
    return (await this.request(`/jobs/${jobId}/matches/preview`, { method: "POST" })).json();
  }

  async putOverrides(jobId: string, overrides: OverridePayload[]): Promise<JobDoc> {
    const response = await this.request(`/jobs/${jobId}/matches`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ overrides }),
    });
    return response.json();
  }

  async run(jobId: string): Promise<JobDoc> {
    return (await this.request(`/jobs/${jobId}/run`, { method: "POST" })).json();
  }

  maskPngUrl(jobId: string, key: string): string {
    return `${this.base}/jobs/${jobId}/masks/${key}.png`;
  }

  resultUrl(jobId: string): string {
    return `${this.base}/jobs/${jobId}/result`;
  }

  async getMaskLabels(jobId: string, key: string): Promise<LabelGrid> {
    const response = await this.request(`/jobs/${jobId}/masks/${key}.png`);
    return decodeMaskPng(await response.arrayBuffer());
  }

  /**
   * Subscribe to the SSE progress stream. The server replays the full event
   * history first, so a mid-run reconnect rebuilds the complete chart.
   * Resolves once a terminal event arrives or the stream closes.
   */
  async streamEvents(
    jobId: string,
    onEvent: (event: StreamEvent) => void,
    signal?: AbortSignal,
  ): Promise<void> {
    const response = await this.request(`/jobs/${jobId}/events`, { signal });
    const body = response.body;
    if (!body) throw new ApiError("event stream has no body", 500);
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let sep: number;
      while ((sep = buffer.indexOf("\n\n")) >= 0) {
        const frame = buffer.slice(0, sep);
        buffer = buffer.slice(sep + 2);
        const line = frame.split("\n").find((l) => l.startsWith("data: "));
        if (!line) continue;
        const event = JSON.parse(line.slice("data: ".length)) as StreamEvent;
        onEvent(event);
        if (event.type === "done" || event.type === "failed") return;
      }
    }
  }
}
