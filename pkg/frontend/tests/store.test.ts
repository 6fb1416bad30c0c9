import { describe, expect, it } from "vitest";

import { StudioApi } from "../src/api.js";
import { SLIDER_DEFAULTS, StudioStore } from "../src/store.js";
import type { JobDoc, StreamEvent } from "../src/types.js";

function jobDoc(overrides: Partial<JobDoc> = {}): JobDoc {
  return {
    id: "job1",
    state: "matched",
    config: {
      transfer: { lambda_c: 0.26, opt_steps: 12 },
      cluster: { k_max: 10, merge_threshold: 0.85 },
    },
    masks: {
      content: {
        sidecar: {
          image_id: "content", n_clusters: 4, provenance: "auto",
          grid_shape: [8, 8], config: {},
        },
      },
      B: {
        sidecar: {
          image_id: "B", n_clusters: 3, provenance: "auto",
          grid_shape: [8, 8], config: {},
        },
      },
    },
    matches: {
      entries: [
        {
          content_cluster: 2, style_image: "B", style_cluster: 1, score: 1.2,
          per_dim: { stat: 0.9, sem: 0.95, pos: 0.8, missing: [] }, origin: "auto",
        },
      ],
    },
    progress: { step: 0, total: 12, last: null },
    style_images: ["B"],
    result_blob: null,
    error: null,
    ...overrides,
  };
}

interface Call {
  url: string;
  init?: RequestInit;
}

function mockApi(calls: Call[], responses: Record<string, () => Response>): StudioApi {
  return new StudioApi("", async (url, init) => {
    calls.push({ url, init });
    const key = `${init?.method ?? "GET"} ${url}`;
    const make = responses[key];
    if (!make) throw new Error(`unexpected request ${key}`);
    return make();
  });
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("StudioStore", () => {
  it("defaults the lambda_c slider to 0.26", () => {
    const store = new StudioStore(new StudioApi(""));
    expect(store.getState().sliders.lambda_c).toBe(0.26);
    expect(SLIDER_DEFAULTS.lambda_c).toBe(0.26);
    expect(store.getState().sliders.k_max).toBe(10);
    expect(store.getState().sliders.merge_threshold).toBe(0.85);
  });

  it("click flow builds the exact PUT payload", () => {
    const store = new StudioStore(new StudioApi(""));
    store.setJob(jobDoc());
    store.setMode("custom");
    store.clickContentCluster(2);
    store.clickStyleCluster("B", 0);
    expect(store.overridePutBody()).toEqual({
      overrides: [{ content_cluster: 2, style_image: "B", style_cluster: 0 }],
    });
  });

  it("rejects clicks on clusters missing from the current masks", () => {
    const store = new StudioStore(new StudioApi(""));
    store.setJob(jobDoc());
    store.setMode("custom");
    store.clickContentCluster(99);
    expect(store.getState().error).toContain("99");
    expect(store.getState().selectedContentCluster).toBeNull();
    store.clickStyleCluster("B", 7);
    expect(store.getState().error).toContain("B/7");
    expect(store.overridePutBody().overrides).toHaveLength(0);
  });

  it("replaces an existing pending override for the same content cluster", () => {
    const store = new StudioStore(new StudioApi(""));
    store.setJob(jobDoc());
    store.setMode("custom");
    store.clickContentCluster(2);
    store.clickStyleCluster("B", 0);
    store.clickContentCluster(2);
    store.clickStyleCluster("B", 2);
    expect(store.overridePutBody().overrides).toEqual([
      { content_cluster: 2, style_image: "B", style_cluster: 2 },
    ]);
  });

  it("auto mode clears pending overrides", () => {
    const store = new StudioStore(new StudioApi(""));
    store.setJob(jobDoc());
    store.setMode("custom");
    store.clickContentCluster(1);
    store.clickStyleCluster("B", 1);
    store.setMode("auto");
    expect(store.overridePutBody().overrides).toHaveLength(0);
  });

  it("drops pending overrides invalidated by a mask refresh", () => {
    const store = new StudioStore(new StudioApi(""));
    store.setJob(jobDoc());
    store.setMode("custom");
    store.clickContentCluster(3);
    store.clickStyleCluster("B", 2);
    const refreshed = jobDoc();
    refreshed.masks["content"]!.sidecar.n_clusters = 2; // cluster 3 gone
    store.setJob(refreshed);
    expect(store.overridePutBody().overrides).toHaveLength(0);
  });

  it("applyAndRun PUTs overrides then POSTs run", async () => {
    const calls: Call[] = [];
    const api = mockApi(calls, {
      "PUT /jobs/job1/matches": () => jsonResponse(jobDoc()),
      "POST /jobs/job1/run": () => jsonResponse(jobDoc({ state: "running" })),
    });
    const store = new StudioStore(api);
    store.setJob(jobDoc());
    store.setMode("custom");
    store.clickContentCluster(2);
    store.clickStyleCluster("B", 0);
    await store.applyAndRun();

    expect(calls.map((c) => `${c.init?.method} ${c.url}`)).toEqual([
      "PUT /jobs/job1/matches",
      "POST /jobs/job1/run",
    ]);
    expect(JSON.parse(String(calls[0]!.init?.body))).toEqual({
      overrides: [{ content_cluster: 2, style_image: "B", style_cluster: 0 }],
    });
    expect(store.getState().job?.state).toBe("running");
  });

  it("stale-state conflict refreshes the job and surfaces the error", async () => {
    const calls: Call[] = [];
    const api = mockApi(calls, {
      "POST /jobs/job1/run": () => jsonResponse({ error: "wrong state" }, 409),
      "GET /jobs/job1": () => jsonResponse(jobDoc({ state: "running" })),
    });
    const store = new StudioStore(api);
    store.setJob(jobDoc());
    await store.applyAndRun(); // auto mode: no PUT, straight to run
    expect(store.getState().error).toContain("wrong state");
    expect(store.getState().job?.state).toBe("running");
  });

  it("chart point count equals opt_steps after a full event stream", () => {
    const store = new StudioStore(new StudioApi(""));
    const optSteps = 12;
    store.setJob(jobDoc());
    for (let step = 1; step <= optSteps; step++) {
      store.onEvent({
        type: "progress", step, rsl: 10 - step * 0.1, gcl: 5, total: 11.3 - step * 0.1,
        percent: (100 * step) / optSteps,
      });
    }
    store.onEvent({ type: "done", result_uri: "/jobs/job1/result" });
    expect(store.getState().chart).toHaveLength(optSteps);
    expect(store.getState().finished).toBe(true);
  });

  it("drops duplicate events replayed on reconnect", () => {
    const store = new StudioStore(new StudioApi(""));
    const event: StreamEvent = {
      type: "progress", step: 1, rsl: 1, gcl: 1, total: 1.26, percent: 10,
    };
    store.onEvent(event);
    store.onEvent(event);
    expect(store.getState().chart).toHaveLength(1);
  });

  it("exposes per-dimension scores for hover inspection", () => {
    const store = new StudioStore(new StudioApi(""));
    store.setJob(jobDoc());
    const match = store.matchForCluster(2);
    expect(match?.per_dim).toEqual({ stat: 0.9, sem: 0.95, pos: 0.8, missing: [] });
    expect(store.matchForCluster(0)).toBeNull();
  });

  it("syncs sliders from the loaded job config", () => {
    const store = new StudioStore(new StudioApi(""));
    const doc = jobDoc();
    doc.config.transfer.lambda_c = 0.29;
    doc.config.cluster.k_max = 6;
    store.setJob(doc);
    expect(store.getState().sliders.lambda_c).toBe(0.29);
    expect(store.getState().sliders.k_max).toBe(6);
  });
});
