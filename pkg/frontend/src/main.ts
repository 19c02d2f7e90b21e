/** Browser entry point: wires the session to a plain-DOM control panel.
 *
 * Everything testable lives in the imported modules; this file is only
 * layout, event plumbing, and drawing.
 */

import { FramePainter } from "./canvas.js";
import type { OrbitState } from "./orbit.js";
import { dragOrbit, initialOrbit, zoomOrbit } from "./orbit.js";
import type { DatasetDescriptor, Mode, Sampler, Traversal } from "./protocol.js";
import { datasetsReply, MODES, SAMPLERS, TRAVERSALS, validCombo } from "./protocol.js";
import { ViewerSession } from "./session.js";
import { binLabel } from "./stats.js";
import type { TfEditorState } from "./tfEditor.js";
import {
  addPoint,
  beginDrag,
  createEditor,
  dragTo,
  emitTable,
  evaluate,
  releaseDrag,
  removePoint,
  setUnitExtinction,
} from "./tfEditor.js";
import { streamUrl, WebSocketTransport } from "./transport.js";

const DRAG_SENSITIVITY = 0.008;
const POINT_HIT_RADIUS = 9;

function nearestIndex(state: TfEditorState, value: number): number {
  let best = 0;
  let bestDist = Infinity;
  state.points.forEach((p, i) => {
    const d = Math.abs(p.position - value);
    if (d < bestDist) {
      best = i;
      bestDist = d;
    }
  });
  return best;
}

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

function option(select: HTMLSelectElement, value: string): HTMLOptionElement {
  const opt = document.createElement("option");
  opt.value = value;
  opt.textContent = value;
  select.appendChild(opt);
  return opt;
}

async function fetchDatasets(): Promise<DatasetDescriptor[]> {
  const res = await fetch("/datasets");
  if (!res.ok) throw new Error(`GET /datasets failed: ${res.status}`);
  return datasetsReply.parse(await res.json()).datasets;
}

function sessionId(): string {
  if (typeof crypto !== "undefined" && "randomUUID" in crypto) {
    return crypto.randomUUID();
  }
  return `s${Math.floor(Math.random() * 1e9)}`;
}

// ---------------------------------------------------------------------------
// transfer-function strip

class TfStrip {
  state: TfEditorState;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    initial: TfEditorState,
    private readonly onCommit: (state: TfEditorState) => void,
  ) {
    this.state = initial;
    canvas.addEventListener("pointerdown", (ev) => this.pointerDown(ev));
    canvas.addEventListener("pointermove", (ev) => this.pointerMove(ev));
    canvas.addEventListener("pointerup", (ev) => this.pointerUp(ev));
    canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
    this.draw();
  }

  reset(state: TfEditorState): void {
    this.state = state;
    this.draw();
  }

  private toValue(x: number): number {
    const [lo, hi] = this.state.domain;
    return lo + (x / this.canvas.width) * (hi - lo);
  }

  private toX(value: number): number {
    const [lo, hi] = this.state.domain;
    return ((value - lo) / (hi - lo)) * this.canvas.width;
  }

  private toAlpha(y: number): number {
    return Math.min(1, Math.max(0, 1 - y / this.canvas.height));
  }

  private hit(ev: PointerEvent): number {
    const rect = this.canvas.getBoundingClientRect();
    const x = ev.clientX - rect.left;
    const y = ev.clientY - rect.top;
    let best = -1;
    let bestDist = POINT_HIT_RADIUS;
    this.state.points.forEach((p, i) => {
      const px = this.toX(p.position);
      const py = (1 - p.rgba[3]) * this.canvas.height;
      const d = Math.hypot(px - x, py - y);
      if (d < bestDist) {
        best = i;
        bestDist = d;
      }
    });
    return best;
  }

  private pointerDown(ev: PointerEvent): void {
    const rect = this.canvas.getBoundingClientRect();
    const x = ev.clientX - rect.left;
    const y = ev.clientY - rect.top;
    const index = this.hit(ev);
    if (ev.button === 2) {
      if (index >= 0) {
        this.state = removePoint(this.state, index);
        this.onCommit(this.state);
        this.draw();
      }
      return;
    }
    if (index >= 0) {
      this.state = beginDrag(this.state, index);
    } else {
      const value = this.toValue(x);
      const rgba = evaluate(this.state, value);
      rgba[3] = this.toAlpha(y);
      const next = addPoint(this.state, value, rgba);
      this.state = beginDrag(next, nearestIndex(next, value));
    }
    this.canvas.setPointerCapture(ev.pointerId);
    this.draw();
  }

  private pointerMove(ev: PointerEvent): void {
    if (this.state.dragging === null) return;
    const rect = this.canvas.getBoundingClientRect();
    const x = ev.clientX - rect.left;
    const y = ev.clientY - rect.top;
    const current = this.state.points[this.state.dragging];
    if (current === undefined) return;
    const rgba: [number, number, number, number] = [
      current.rgba[0],
      current.rgba[1],
      current.rgba[2],
      this.toAlpha(y),
    ];
    this.state = dragTo(this.state, this.toValue(x), rgba);
    this.draw();
  }

  private pointerUp(ev: PointerEvent): void {
    if (this.state.dragging === null) return;
    this.canvas.releasePointerCapture(ev.pointerId);
    const { state, commit } = releaseDrag(this.state);
    this.state = state;
    if (commit !== null) this.onCommit(state);
    this.draw();
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (ctx === null) return;
    const { width, height } = this.canvas;
    const [lo, hi] = this.state.domain;
    for (let x = 0; x < width; x++) {
      const value = lo + (x / (width - 1)) * (hi - lo);
      const [r, g, b, a] = evaluate(this.state, value);
      ctx.fillStyle = `rgb(${r * 255 | 0},${g * 255 | 0},${b * 255 | 0})`;
      ctx.fillRect(x, 0, 1, height);
      ctx.fillStyle = "rgba(0,0,0,0.55)";
      ctx.fillRect(x, 0, 1, (1 - a) * height);
    }
    ctx.strokeStyle = "#fff";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    this.state.points.forEach((p, i) => {
      const px = this.toX(p.position);
      const py = (1 - p.rgba[3]) * height;
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
    this.state.points.forEach((p, i) => {
      const px = this.toX(p.position);
      const py = (1 - p.rgba[3]) * height;
      ctx.beginPath();
      ctx.arc(px, py, 5, 0, Math.PI * 2);
      ctx.fillStyle = i === this.state.dragging ? "#ffd54a" : "#fff";
      ctx.fill();
      ctx.strokeStyle = "#222";
      ctx.stroke();
    });
  }
}

// ---------------------------------------------------------------------------
// stats drawing

function drawHistogram(
  canvas: HTMLCanvasElement,
  counts: number[] | null,
): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  if (counts === null || counts.length === 0) {
    ctx.fillStyle = "#666";
    ctx.font = "12px sans-serif";
    ctx.fillText("no data", 8, height / 2);
    return;
  }
  const n = counts.length;
  const peak = Math.max(1, ...counts);
  const barW = width / n;
  ctx.fillStyle = "#4a90d9";
  counts.forEach((c, i) => {
    const h = (c / peak) * (height - 14);
    ctx.fillRect(i * barW + 1, height - 12 - h, barW - 2, h);
  });
  ctx.fillStyle = "#999";
  ctx.font = "9px sans-serif";
  for (let i = 0; i < n; i += 4) {
    ctx.fillText(binLabel(i), i * barW + 1, height - 2);
  }
}

function fmt(x: number | null, digits = 0): string {
  if (x === null) return "-";
  return x.toLocaleString("en-US", {
    maximumFractionDigits: digits,
    minimumFractionDigits: digits,
  });
}

// ---------------------------------------------------------------------------
// app wiring

async function start(): Promise<void> {
  const datasetSelect = byId<HTMLSelectElement>("dataset");
  const traversalSelect = byId<HTMLSelectElement>("traversal");
  const samplerSelect = byId<HTMLSelectElement>("sampler");
  const modeSelect = byId<HTMLSelectElement>("mode");
  const dimsInput = byId<HTMLInputElement>("grid-dims");
  const dimsApply = byId<HTMLButtonElement>("grid-dims-apply");
  const unitExtInput = byId<HTMLInputElement>("unit-extinction");
  const viewport = byId<HTMLCanvasElement>("viewport");
  const tfCanvas = byId<HTMLCanvasElement>("tf-strip");
  const statusLine = byId<HTMLElement>("status");
  const reconnectBtn = byId<HTMLButtonElement>("reconnect");
  const errorsList = byId<HTMLElement>("errors");
  const statsMethod = byId<HTMLElement>("stats-method");
  const statsNumbers = byId<HTMLElement>("stats-numbers");
  const histPartitions = byId<HTMLCanvasElement>("hist-partitions");
  const histSamples = byId<HTMLCanvasElement>("hist-samples");

  const datasets = await fetchDatasets();
  if (datasets.length === 0) throw new Error("server has no datasets");
  datasets.forEach((ds) => option(datasetSelect, ds.name));
  TRAVERSALS.forEach((t) => option(traversalSelect, t));
  SAMPLERS.forEach((s) => option(samplerSelect, s));
  MODES.forEach((m) => option(modeSelect, m));

  const painter = new FramePainter(viewport);
  const session = sessionId();

  let dataset = datasets[0]!;
  let viewer: ViewerSession | null = null;
  let strip: TfStrip | null = null;
  let painted = "";

  const syncComboOptions = (): void => {
    const traversal = traversalSelect.value as Traversal;
    for (const opt of samplerSelect.options) {
      opt.disabled = !validCombo(traversal, opt.value as Sampler);
    }
    const chosen = samplerSelect.selectedOptions[0];
    if (chosen !== undefined && chosen.disabled) samplerSelect.value = "abr";
  };

  const render = (): void => {
    if (viewer === null) return;
    statusLine.textContent =
      viewer.connection === "open"
        ? `connected (generation ${viewer.generation})`
        : viewer.connection;
    reconnectBtn.hidden = !viewer.needsReconnect;
    errorsList.textContent = viewer.errors.slice(-5).join("\n");

    const pair = viewer.displayed;
    statsMethod.textContent = viewer.stats.label;
    if (pair !== null) {
      const key = `${pair.frame.generation}:${pair.frame.spp}`;
      if (key !== painted) {
        painted = key;
        void painter.paint(pair.frame);
      }
      const s = pair.stats;
      const mass = viewer.stats.massConsistent();
      statsNumbers.textContent = [
        `generation ${pair.frame.generation}, spp ${pair.frame.spp}`,
        `rays/s ${fmt(s.raysPerSecond)}`,
        `rays ${fmt(s.rays)}`,
        `mean partitions/ray ${fmt(s.meanPartitionsPerRay, 2)}`,
        `null-collision rate ${fmt(s.meanNullCollisions, 3)}`,
        `histogram mass ${mass === null ? "-" : mass ? "= rays" : "MISMATCH"}`,
      ].join("\n");
      drawHistogram(histPartitions, s.partitionsPerRay);
      drawHistogram(histSamples, s.samplesPerPartition);
    }
  };

  const connect = (): void => {
    viewer?.close();
    viewer = new ViewerSession(() =>
      new WebSocketTransport(
        streamUrl(window.location.origin, session, dataset.name),
      ),
    );
    viewer.onUpdate = render;
    viewer.connect();
    painted = "";

    const editor = createEditor(dataset.defaultTf);
    unitExtInput.value = String(editor.unitExtinction);
    const commit = (state: TfEditorState): void => {
      viewer?.commitTf(emitTable(state));
    };
    if (strip === null) strip = new TfStrip(tfCanvas, editor, commit);
    else strip.reset(editor);

    traversalSelect.value = viewer.method.traversal;
    samplerSelect.value = viewer.method.sampler;
    modeSelect.value = viewer.mode;
    syncComboOptions();

    // Sync the orbit once the socket opens so later drags are relative
    // to a known camera.
    let oriented = false;
    const orient = (): void => {
      if (oriented || viewer === null || viewer.connection !== "open") return;
      oriented = true;
      viewer.setOrbit(initialOrbit(dataset));
    };
    const base = viewer.onUpdate;
    viewer.onUpdate = () => {
      orient();
      base?.();
    };
  };

  datasetSelect.addEventListener("change", () => {
    const next = datasets.find((d) => d.name === datasetSelect.value);
    if (next === undefined) return;
    dataset = next;
    connect();
  });

  traversalSelect.addEventListener("change", () => {
    syncComboOptions();
    viewer?.setMethod(
      traversalSelect.value as Traversal,
      samplerSelect.value as Sampler,
    );
  });
  samplerSelect.addEventListener("change", () => {
    viewer?.setMethod(
      traversalSelect.value as Traversal,
      samplerSelect.value as Sampler,
    );
  });
  modeSelect.addEventListener("change", () => {
    viewer?.setMode(modeSelect.value as Mode);
  });

  dimsApply.addEventListener("click", () => {
    const parts = dimsInput.value.split(/[x, ]+/).map((p) => Number(p));
    if (parts.length === 3 && viewer !== null) {
      const [a, b, c] = parts;
      if (a !== undefined && b !== undefined && c !== undefined) {
        viewer.setGridDims([a, b, c]);
      }
    }
  });

  unitExtInput.addEventListener("change", () => {
    if (strip === null || viewer === null) return;
    const value = Number(unitExtInput.value);
    const next = setUnitExtinction(strip.state, value);
    if (next !== strip.state) {
      strip.reset(next);
      viewer.commitTf(emitTable(next));
    }
  });

  // Orbit interactions on the viewport.
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  viewport.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    viewport.setPointerCapture(ev.pointerId);
  });
  viewport.addEventListener("pointermove", (ev) => {
    if (!dragging || viewer === null) return;
    const orbit: OrbitState = viewer.orbit ?? initialOrbit(dataset);
    const next = dragOrbit(
      orbit,
      -(ev.clientX - lastX) * DRAG_SENSITIVITY,
      (ev.clientY - lastY) * DRAG_SENSITIVITY,
    );
    lastX = ev.clientX;
    lastY = ev.clientY;
    viewer.setOrbit(next);
  });
  viewport.addEventListener("pointerup", (ev) => {
    dragging = false;
    viewport.releasePointerCapture(ev.pointerId);
  });
  viewport.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    if (viewer === null) return;
    const orbit = viewer.orbit ?? initialOrbit(dataset);
    viewer.setOrbit(zoomOrbit(orbit, ev.deltaY > 0 ? 1.1 : 1 / 1.1));
  });

  reconnectBtn.addEventListener("click", () => connect());

  connect();
}

void start().catch((err) => {
  const status = document.getElementById("status");
  if (status !== null) status.textContent = `startup failed: ${String(err)}`;
});
