/** Shared test doubles: a deterministic PRNG for property-style tests,
 * a manual clock for the throttle, and a scriptable transport. */

import type { Scheduler } from "../src/throttle.js";
import type { Transport, TransportState } from "../src/transport.js";

/** mulberry32: tiny seeded generator, uniform in [0, 1). */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function pick<T>(rng: () => number, items: readonly T[]): T {
  const i = Math.floor(rng() * items.length);
  return items[Math.min(i, items.length - 1)]!;
}

interface PendingTimer {
  at: number;
  fn: () => void;
  id: number;
}

/** Virtual clock; timers fire in due order inside advance(). */
export class FakeScheduler implements Scheduler {
  private time = 0;
  private timers: PendingTimer[] = [];
  private nextId = 1;

  now(): number {
    return this.time;
  }

  setTimeout(fn: () => void, ms: number): unknown {
    const id = this.nextId++;
    this.timers.push({ at: this.time + ms, fn, id });
    return id;
  }

  clearTimeout(handle: unknown): void {
    this.timers = this.timers.filter((t) => t.id !== handle);
  }

  advance(ms: number): void {
    const target = this.time + ms;
    for (;;) {
      const due = this.timers
        .filter((t) => t.at <= target)
        .sort((a, b) => a.at - b.at || a.id - b.id)[0];
      if (due === undefined) break;
      this.timers = this.timers.filter((t) => t.id !== due.id);
      this.time = due.at;
      due.fn();
    }
    this.time = target;
  }
}

/** In-memory transport: records outbound text, scripts inbound JSON. */
export class FakeTransport implements Transport {
  state: TransportState = "connecting";
  readonly sent: string[] = [];
  onMessage: ((text: string) => void) | null = null;
  onStateChange: ((state: TransportState) => void) | null = null;

  open(): void {
    this.state = "open";
    this.onStateChange?.("open");
  }

  send(text: string): void {
    this.sent.push(text);
  }

  close(): void {
    if (this.state === "closed") return;
    this.state = "closed";
    this.onStateChange?.("closed");
  }

  receive(msg: unknown): void {
    this.onMessage?.(typeof msg === "string" ? msg : JSON.stringify(msg));
  }

  sentJson(): unknown[] {
    return this.sent.map((s) => JSON.parse(s));
  }
}
