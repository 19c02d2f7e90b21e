/** Statistics panel model: rolling per-pass series under the active
 * method label, with an accounting check that the partitions-per-ray
 * histogram mass equals the reported ray count.
 *
 * Fields may be missing from any stats message; they render as gaps
 * (null) and are simply skipped by the plots.
 */

import type { StatsMessage } from "./protocol.js";

export interface StatsPoint {
  generation: number;
  spp: number | null;
  rays: number | null;
  raysPerSecond: number | null;
  meanPartitionsPerRay: number | null;
  meanNullCollisions: number | null;
  partitionsPerRay: number[] | null;
  samplesPerPartition: number[] | null;
  /** Sum of histogram bars versus the ray count; null when either side
   * is missing from the message. */
  massMatchesRays: boolean | null;
}

export interface StatsSeries {
  label: string;
  points: StatsPoint[];
}

function gap<T>(v: T | undefined): T | null {
  return v === undefined ? null : v;
}

export function toPoint(msg: StatsMessage): StatsPoint {
  const hp = gap(msg.histograms?.partitionsPerRay);
  const rays = gap(msg.rays);
  let massMatchesRays: boolean | null = null;
  if (hp !== null && rays !== null) {
    massMatchesRays = hp.reduce((a, b) => a + b, 0) === rays;
  }
  return {
    generation: msg.generation,
    spp: gap(msg.spp),
    rays,
    raysPerSecond: gap(msg.raysPerSecond),
    meanPartitionsPerRay: gap(msg.meanPartitionsPerRay),
    meanNullCollisions: gap(msg.meanNullCollisions),
    partitionsPerRay: hp,
    samplesPerPartition: gap(msg.histograms?.samplesPerPartition),
    massMatchesRays,
  };
}

export class StatsPanelModel {
  private series: StatsSeries;
  readonly maxPoints: number;

  constructor(label: string, maxPoints = 256) {
    this.series = { label, points: [] };
    this.maxPoints = maxPoints;
  }

  get label(): string {
    return this.series.label;
  }

  /** Switching methods restarts the series under the new label, so a
   * plot never mixes passes from different configurations. */
  setLabel(label: string): void {
    if (label === this.series.label) return;
    this.series = { label, points: [] };
  }

  push(msg: StatsMessage): StatsPoint {
    const point = toPoint(msg);
    this.series.points.push(point);
    if (this.series.points.length > this.maxPoints) {
      this.series.points.shift();
    }
    return point;
  }

  current(): StatsPoint | null {
    return this.series.points[this.series.points.length - 1] ?? null;
  }

  history(): readonly StatsPoint[] {
    return this.series.points;
  }

  /** False as soon as any pass in the series failed the accounting
   * check; null while no pass carried both sides. */
  massConsistent(): boolean | null {
    let seen: boolean | null = null;
    for (const p of this.series.points) {
      if (p.massMatchesRays === false) return false;
      if (p.massMatchesRays === true) seen = true;
    }
    return seen;
  }
}

/** Label for a histogram bin: bin 0 holds zero, bin k holds counts in
 * [2^(k-1), 2^k). */
export function binLabel(index: number): string {
  if (index <= 0) return "0";
  if (index === 1) return "1";
  return `${2 ** (index - 1)}-${2 ** index - 1}`;
}
