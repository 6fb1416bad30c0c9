/** DOM wiring for the studio. All state lives in StudioStore. */

import { StudioApi } from "./api.js";
import { clusterColor } from "./colors.js";
import { polyline } from "./chart.js";
import type { LabelGrid } from "./png16.js";
import { StudioStore } from "./store.js";

const params = new URLSearchParams(location.search);
const apiBase = params.get("api") ?? "";
const api = new StudioApi(apiBase);
const store = new StudioStore(api);

const app = document.getElementById("app")!;
app.innerHTML = `
  <header>
    <h1>StyleGallery studio</h1>
    <div class="job-bar">
      <input id="job-id" placeholder="job id" value="${params.get("job") ?? ""}" />
      <button id="load">Load</button>
      <label><input type="radio" name="mode" value="auto" checked /> Auto</label>
      <label><input type="radio" name="mode" value="custom" /> Custom</label>
    </div>
  </header>
  <section id="error" class="error" hidden></section>
  <section id="masks" class="masks"></section>
  <section id="editor" class="editor" hidden>
    <h2>Match overrides</h2>
    <p class="hint">Click a content region, then a style region, to pin a match.</p>
    <ul id="override-list"></ul>
    <div class="sliders">
      <label>lambda_c <input id="lambda-c" type="range" min="0" max="1" step="0.01" />
        <span id="lambda-c-value"></span></label>
      <label>k_max <input id="k-max" type="range" min="2" max="20" step="1" />
        <span id="k-max-value"></span></label>
      <label>merge threshold <input id="merge-th" type="range" min="0.5" max="0.99" step="0.01" />
        <span id="merge-th-value"></span></label>
    </div>
  </section>
  <section class="actions">
    <button id="apply-run">Apply &amp; Run</button>
    <span id="state-badge"></span>
  </section>
  <section class="chart">
    <svg id="loss-chart" viewBox="0 0 600 200" width="600" height="200">
      <polyline id="line-total" fill="none" stroke="#222" stroke-width="2"></polyline>
      <polyline id="line-rsl" fill="none" stroke="#d0452c" stroke-width="1.5"></polyline>
      <polyline id="line-gcl" fill="none" stroke="#2c6fd0" stroke-width="1.5"></polyline>
    </svg>
    <div id="progress-text"></div>
  </section>
  <section id="result"></section>
  <div id="hover-card" class="hover-card" hidden></div>
`;

const grids = new Map<string, LabelGrid>();

function maskCanvas(key: string, grid: LabelGrid): HTMLCanvasElement {
  const scale = 12;
  const canvas = document.createElement("canvas");
  canvas.width = grid.width * scale;
  canvas.height = grid.height * scale;
  canvas.dataset.key = key;
  const ctx = canvas.getContext("2d")!;
  for (let y = 0; y < grid.height; y++) {
    for (let x = 0; x < grid.width; x++) {
      ctx.fillStyle = clusterColor(grid.labels[y * grid.width + x]!, 0.9);
      ctx.fillRect(x * scale, y * scale, scale, scale);
    }
  }
  canvas.addEventListener("click", (ev) => {
    const cluster = clusterAt(grid, canvas, ev);
    if (cluster === null) return;
    if (key === "content") store.clickContentCluster(cluster);
    else store.clickStyleCluster(key, cluster);
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (key !== "content") return;
    const cluster = clusterAt(grid, canvas, ev);
    showHoverCard(ev, cluster);
  });
  canvas.addEventListener("mouseleave", () => hideHoverCard());
  return canvas;
}

function clusterAt(grid: LabelGrid, canvas: HTMLCanvasElement, ev: MouseEvent): number | null {
  const rect = canvas.getBoundingClientRect();
  const x = Math.floor(((ev.clientX - rect.left) / rect.width) * grid.width);
  const y = Math.floor(((ev.clientY - rect.top) / rect.height) * grid.height);
  if (x < 0 || y < 0 || x >= grid.width || y >= grid.height) return null;
  return grid.labels[y * grid.width + x]!;
}

function showHoverCard(ev: MouseEvent, cluster: number | null): void {
  const card = document.getElementById("hover-card")!;
  if (cluster === null) {
    card.hidden = true;
    return;
  }
  const match = store.matchForCluster(cluster);
  if (!match) {
    card.hidden = true;
    return;
  }
  const d = match.per_dim;
  card.innerHTML =
    `cluster ${cluster} &rarr; ${match.style_image}/${match.style_cluster} ` +
    `<small>stat ${d.stat.toFixed(3)} &middot; sem ${d.sem.toFixed(3)} &middot; ` +
    `pos ${d.pos.toFixed(3)} &middot; ${match.origin}</small>`;
  card.style.left = `${ev.pageX + 12}px`;
  card.style.top = `${ev.pageY + 12}px`;
  card.hidden = false;
}

function hideHoverCard(): void {
  document.getElementById("hover-card")!.hidden = true;
}

async function loadJob(jobId: string): Promise<void> {
  grids.clear();
  const controller = new AbortController();
  await store.reconstruct(jobId, controller.signal).catch((err) => {
    document.getElementById("error")!.textContent = String(err);
    document.getElementById("error")!.hidden = false;
  });
  const job = store.getState().job;
  if (!job) return;
  const masksEl = document.getElementById("masks")!;
  masksEl.innerHTML = "";
  for (const key of Object.keys(job.masks)) {
    const grid = await api.getMaskLabels(job.id, key);
    grids.set(key, grid);
    const cell = document.createElement("figure");
    const caption = document.createElement("figcaption");
    caption.textContent = `${key} (${grid.width}x${grid.height}, ${job.masks[key]!.sidecar.n_clusters} clusters)`;
    cell.appendChild(maskCanvas(key, grid));
    cell.appendChild(caption);
    masksEl.appendChild(cell);
  }
}

function render(): void {
  const state = store.getState();
  const errorEl = document.getElementById("error")!;
  errorEl.hidden = !state.error;
  if (state.error) errorEl.innerHTML = `${state.error} <button id="retry">Retry</button>`;

  document.getElementById("editor")!.hidden = state.mode !== "custom";

  const lambda = document.getElementById("lambda-c") as HTMLInputElement;
  lambda.value = String(state.sliders.lambda_c);
  document.getElementById("lambda-c-value")!.textContent = state.sliders.lambda_c.toFixed(2);
  const kmax = document.getElementById("k-max") as HTMLInputElement;
  kmax.value = String(state.sliders.k_max);
  document.getElementById("k-max-value")!.textContent = String(state.sliders.k_max);
  const mergeTh = document.getElementById("merge-th") as HTMLInputElement;
  mergeTh.value = String(state.sliders.merge_threshold);
  document.getElementById("merge-th-value")!.textContent = state.sliders.merge_threshold.toFixed(2);

  const list = document.getElementById("override-list")!;
  list.innerHTML = state.pendingOverrides
    .map(
      (o) =>
        `<li>content ${o.content_cluster} &rarr; ${o.style_image}/${o.style_cluster}` +
        ` <button data-remove="${o.content_cluster}">remove</button></li>`,
    )
    .join("");

  const job = state.job;
  document.getElementById("state-badge")!.textContent = job
    ? `${job.state} (${state.chart.length}/${job.config.transfer.opt_steps} steps)`
    : "";

  const total = job?.config.transfer.opt_steps ?? 1;
  (document.getElementById("line-total") as unknown as SVGPolylineElement).setAttribute(
    "points", polyline(state.chart, "total", 600, 200, total),
  );
  (document.getElementById("line-rsl") as unknown as SVGPolylineElement).setAttribute(
    "points", polyline(state.chart, "rsl", 600, 200, total),
  );
  (document.getElementById("line-gcl") as unknown as SVGPolylineElement).setAttribute(
    "points", polyline(state.chart, "gcl", 600, 200, total),
  );
  const last = state.chart[state.chart.length - 1];
  document.getElementById("progress-text")!.textContent = last
    ? `step ${last.step}: total ${last.total.toFixed(2)} (rsl ${last.rsl.toFixed(2)}, gcl ${last.gcl.toFixed(2)})`
    : "";

  const resultEl = document.getElementById("result")!;
  if (job && state.finished && job.state !== "failed") {
    resultEl.innerHTML = `<h2>Result</h2><img src="${api.resultUrl(job.id)}?t=${Date.now()}" alt="stylized result" />`;
  }
}

store.subscribe(render);

document.getElementById("load")!.addEventListener("click", () => {
  const jobId = (document.getElementById("job-id") as HTMLInputElement).value.trim();
  if (jobId) void loadJob(jobId);
});
document.getElementById("apply-run")!.addEventListener("click", () => {
  void store.applyAndRun().then(() => {
    const job = store.getState().job;
    if (job) void store.reconstruct(job.id).then(render);
  });
});
document.querySelectorAll<HTMLInputElement>("input[name=mode]").forEach((radio) =>
  radio.addEventListener("change", () => store.setMode(radio.value as "auto" | "custom")),
);
(document.getElementById("lambda-c") as HTMLInputElement).addEventListener("input", (ev) =>
  store.setSlider("lambda_c", Number((ev.target as HTMLInputElement).value)),
);
(document.getElementById("k-max") as HTMLInputElement).addEventListener("input", (ev) =>
  store.setSlider("k_max", Number((ev.target as HTMLInputElement).value)),
);
(document.getElementById("merge-th") as HTMLInputElement).addEventListener("input", (ev) =>
  store.setSlider("merge_threshold", Number((ev.target as HTMLInputElement).value)),
);
document.getElementById("override-list")!.addEventListener("click", (ev) => {
  const target = ev.target as HTMLElement;
  const remove = target.dataset["remove"];
  if (remove !== undefined) store.removeOverride(Number(remove));
});
document.getElementById("error")!.addEventListener("click", (ev) => {
  if ((ev.target as HTMLElement).id === "retry") void store.applyAndRun();
});

const initialJob = params.get("job");
if (initialJob) void loadJob(initialJob);

render();
