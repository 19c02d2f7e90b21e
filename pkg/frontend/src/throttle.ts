/** Trailing-edge rate limiter for camera drags.
 *
 * At most `maxPerSecond` deliveries; a value offered during the
 * cooldown replaces any pending one and is flushed when the cooldown
 * ends, so the final drag position always reaches the server. Clock
 * and timer are injectable so tests control time.
 */

export interface Scheduler {
  now(): number;
  setTimeout(fn: () => void, ms: number): unknown;
  clearTimeout(handle: unknown): void;
}

export const realScheduler: Scheduler = {
  now: () => Date.now(),
  setTimeout: (fn, ms) => setTimeout(fn, ms),
  clearTimeout: (h) => clearTimeout(h as Parameters<typeof clearTimeout>[0]),
};

export class CoalescingThrottle<T> {
  private readonly intervalMs: number;
  private lastSent = -Infinity;
  private pending: { value: T } | null = null;
  private timer: unknown = null;

  constructor(
    maxPerSecond: number,
    private readonly deliver: (value: T) => void,
    private readonly scheduler: Scheduler = realScheduler,
  ) {
    if (maxPerSecond <= 0) throw new Error("maxPerSecond must be positive");
    this.intervalMs = 1000 / maxPerSecond;
  }

  offer(value: T): void {
    const now = this.scheduler.now();
    if (this.pending === null && now - this.lastSent >= this.intervalMs) {
      this.lastSent = now;
      this.deliver(value);
      return;
    }
    this.pending = { value };
    if (this.timer === null) {
      const wait = Math.max(0, this.lastSent + this.intervalMs - now);
      this.timer = this.scheduler.setTimeout(() => this.flush(), wait);
    }
  }

  private flush(): void {
    this.timer = null;
    if (this.pending === null) return;
    const { value } = this.pending;
    this.pending = null;
    this.lastSent = this.scheduler.now();
    this.deliver(value);
  }

  /** Drop whatever is pending (used when the transport closes). */
  cancel(): void {
    if (this.timer !== null) this.scheduler.clearTimeout(this.timer);
    this.timer = null;
    this.pending = null;
  }
}
