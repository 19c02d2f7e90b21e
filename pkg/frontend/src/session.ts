/** Viewer session: one websocket stream plus the state the UI renders.
 *
 * All user edits funnel through here. Camera drags are throttled to
 * `maxCameraPerSecond` coalesced messages; a transfer-function commit
 * always carries the full resampled table; switching methods sends
 * exactly one message per actual change and restarts the stats series.
 *
 * The displayed frame and the displayed stats always come from the
 * same generation: a frame for a new generation is held until its
 * stats arrive, so the panel never describes a different image than
 * the one on screen.
 */

import type { OrbitState } from "./orbit.js";
import { orbitCamera } from "./orbit.js";
import type {
  CameraPayload,
  EditType,
  FrameMessage,
  MethodPayload,
  Mode,
  Sampler,
  StatsMessage,
  TfPayload,
  Traversal,
} from "./protocol.js";
import {
  envelope,
  gridDimsPayload,
  parseServerMessage,
  validCombo,
} from "./protocol.js";
import type { StatsPoint } from "./stats.js";
import { StatsPanelModel } from "./stats.js";
import type { Scheduler } from "./throttle.js";
import { CoalescingThrottle, realScheduler } from "./throttle.js";
import type { Transport, TransportState } from "./transport.js";

export interface DisplayedPair {
  frame: FrameMessage;
  stats: StatsPoint;
}

export interface SessionOptions {
  scheduler?: Scheduler;
  maxCameraPerSecond?: number;
  traversal?: Traversal;
  sampler?: Sampler;
  mode?: Mode;
  maxErrors?: number;
}

export function methodLabel(m: MethodPayload): string {
  return `${m.traversal} / ${m.sampler}`;
}

export class ViewerSession {
  private transport: Transport | null = null;
  private readonly openTransport: () => Transport;
  private readonly cameraThrottle: CoalescingThrottle<CameraPayload>;
  private readonly maxErrors: number;

  private latestFrame: FrameMessage | null = null;
  private latestStats: { generation: number; point: StatsPoint } | null = null;

  orbit: OrbitState | null = null;
  method: MethodPayload;
  mode: Mode;
  /** Generation of the last acknowledged edit. */
  generation = 0;
  displayed: DisplayedPair | null = null;
  errors: string[] = [];
  connection: TransportState = "closed";
  /** Set when the stream drops; the UI swaps controls for a reconnect
   * button and nothing is queued in the meantime. */
  needsReconnect = false;
  readonly stats: StatsPanelModel;

  /** Fired after any state change so the UI can re-render. */
  onUpdate: (() => void) | null = null;

  constructor(openTransport: () => Transport, opts: SessionOptions = {}) {
    this.openTransport = openTransport;
    // Defaults mirror the server's fresh-session config, so no message
    // is owed at startup.
    this.method = {
      traversal: opts.traversal ?? "abr-bvh",
      sampler: opts.sampler ?? "abr-direct",
    };
    this.mode = opts.mode ?? "dl";
    this.maxErrors = opts.maxErrors ?? 20;
    this.stats = new StatsPanelModel(methodLabel(this.method));
    this.cameraThrottle = new CoalescingThrottle(
      opts.maxCameraPerSecond ?? 30,
      (payload) => this.sendEdit("camera", payload),
      opts.scheduler ?? realScheduler,
    );
  }

  connect(): void {
    this.transport?.close();
    const t = this.openTransport();
    this.transport = t;
    this.connection = t.state;
    this.needsReconnect = false;
    this.latestFrame = null;
    this.latestStats = null;
    t.onMessage = (text) => this.handleMessage(text);
    t.onStateChange = (state) => {
      this.connection = state;
      if (state === "closed") {
        this.cameraThrottle.cancel();
        this.needsReconnect = true;
      }
      this.notify();
    };
    this.notify();
  }

  close(): void {
    this.transport?.close();
  }

  // -------------------------------------------------------------------------
  // user edits

  /** Store the new orbit and offer its camera to the rate limiter. */
  setOrbit(orbit: OrbitState): void {
    this.orbit = orbit;
    this.cameraThrottle.offer(orbitCamera(orbit));
    this.notify();
  }

  /** Commit a full transfer-function table (pointer release or numeric
   * edit). Deliberately unthrottled: commits are discrete and each one
   * pays for a reclassification, so none may be dropped. */
  commitTf(table: TfPayload): boolean {
    return this.sendEdit("tf", table);
  }

  /** Returns false (and sends nothing) when the pairing is invalid or
   * unchanged; a real switch sends exactly one message. */
  setMethod(traversal: Traversal, sampler: Sampler): boolean {
    if (!validCombo(traversal, sampler)) return false;
    if (
      traversal === this.method.traversal &&
      sampler === this.method.sampler
    ) {
      return false;
    }
    const next: MethodPayload = { traversal, sampler };
    if (!this.sendEdit("method", next)) return false;
    this.method = next;
    this.stats.setLabel(methodLabel(next));
    this.notify();
    return true;
  }

  setMode(mode: Mode): boolean {
    if (mode === this.mode) return false;
    if (!this.sendEdit("mode", { mode })) return false;
    this.mode = mode;
    this.notify();
    return true;
  }

  setGridDims(dims: [number, number, number]): boolean {
    const checked = gridDimsPayload.safeParse({ dims });
    if (!checked.success) return false;
    return this.sendEdit("gridDims", checked.data);
  }

  private sendEdit<T extends EditType>(
    type: T,
    payload: Parameters<typeof envelope<T>>[1],
  ): boolean {
    if (this.transport === null || this.transport.state !== "open") {
      return false;
    }
    this.transport.send(JSON.stringify(envelope(type, payload)));
    return true;
  }

  // -------------------------------------------------------------------------
  // server messages

  private handleMessage(text: string): void {
    const parsed = parseServerMessage(text);
    if (!parsed.ok) {
      this.pushError(`bad message: ${parsed.reason}`);
      this.notify();
      return;
    }
    const msg = parsed.msg;
    switch (msg.type) {
      case "ack":
        this.generation = msg.generation;
        break;
      case "error":
        this.pushError(msg.message);
        break;
      case "frame":
        this.latestFrame = msg;
        this.pairDisplay();
        break;
      case "stats":
        this.handleStats(msg);
        break;
    }
    this.notify();
  }

  private handleStats(msg: StatsMessage): void {
    const point = this.stats.push(msg);
    this.latestStats = { generation: msg.generation, point };
    this.pairDisplay();
  }

  private pairDisplay(): void {
    if (
      this.latestFrame !== null &&
      this.latestStats !== null &&
      this.latestFrame.generation === this.latestStats.generation
    ) {
      this.displayed = {
        frame: this.latestFrame,
        stats: this.latestStats.point,
      };
    }
  }

  private pushError(message: string): void {
    this.errors.push(message);
    if (this.errors.length > this.maxErrors) this.errors.shift();
  }

  private notify(): void {
    this.onUpdate?.();
  }
}
