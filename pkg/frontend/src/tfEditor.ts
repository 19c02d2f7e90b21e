/** Transfer-function editor model: draggable RGBA control points over a
 * scalar domain, resampled into an even table on commit.
 *
 * Edits keep two invariants at all times: positions stay sorted and
 * every component stays in [0, 1]. Nothing is sent while dragging; the
 * table goes out on pointer release, because each commit costs the
 * server a reclassification and an accumulation restart.
 */

import type { RgbaRow, TfPayload } from "./protocol.js";
import { tfPayload } from "./protocol.js";

export interface ControlPoint {
  /** Scalar value of this point, always inside the domain. */
  position: number;
  rgba: RgbaRow;
}

export interface TfEditorState {
  domain: [number, number];
  points: ControlPoint[];
  unitExtinction: number;
  /** Index of the point being dragged, or null between gestures. */
  dragging: number | null;
}

export const DEFAULT_TABLE_ENTRIES = 32;

// NaN falls to 0 rather than poisoning the sort order or the table.
const clamp01 = (x: number): number =>
  Number.isFinite(x) ? Math.min(1, Math.max(0, x)) : 0;

function clampRgba(rgba: readonly number[]): RgbaRow {
  return [
    clamp01(rgba[0] ?? 0),
    clamp01(rgba[1] ?? 0),
    clamp01(rgba[2] ?? 0),
    clamp01(rgba[3] ?? 0),
  ];
}

function clampPosition(state: TfEditorState, position: number): number {
  const [lo, hi] = state.domain;
  if (!Number.isFinite(position)) return lo;
  return Math.min(hi, Math.max(lo, position));
}

function sorted(points: ControlPoint[]): ControlPoint[] {
  return [...points].sort((a, b) => a.position - b.position);
}

export function createEditor(tf: TfPayload): TfEditorState {
  const [lo, hi] = tf.domain;
  const n = tf.rgba.length;
  const points = tf.rgba.map((rgba, i) => ({
    position: n === 1 ? lo : lo + (i * (hi - lo)) / (n - 1),
    rgba: clampRgba(rgba),
  }));
  return {
    domain: [lo, hi],
    points: sorted(points),
    unitExtinction: tf.unitExtinction,
    dragging: null,
  };
}

/** The drag, if any, follows its point by identity through reorders
 * and removals; removing the dragged point ends the gesture. */
function withPoints(
  state: TfEditorState,
  points: ControlPoint[],
): TfEditorState {
  if (state.dragging === null) return { ...state, points };
  const dragged = state.points[state.dragging];
  const at = dragged === undefined ? -1 : points.indexOf(dragged);
  return { ...state, points, dragging: at === -1 ? null : at };
}

export function addPoint(
  state: TfEditorState,
  position: number,
  rgba: readonly number[],
): TfEditorState {
  const point = {
    position: clampPosition(state, position),
    rgba: clampRgba(rgba),
  };
  return withPoints(state, sorted([...state.points, point]));
}

export function removePoint(state: TfEditorState, index: number): TfEditorState {
  if (index < 0 || index >= state.points.length) return state;
  if (state.points.length <= 2) return state; // a table needs two rows
  return withPoints(state, state.points.filter((_, i) => i !== index));
}

export function beginDrag(state: TfEditorState, index: number): TfEditorState {
  if (index < 0 || index >= state.points.length) return state;
  return { ...state, dragging: index };
}

/** Move the dragged point; crossing a neighbor reorders the list and
 * the drag follows the point to its new index. */
export function dragTo(
  state: TfEditorState,
  position: number,
  rgba?: readonly number[],
): TfEditorState {
  if (state.dragging === null) return state;
  const current = state.points[state.dragging];
  if (current === undefined) return state;
  const moved: ControlPoint = {
    position: clampPosition(state, position),
    rgba: rgba === undefined ? current.rgba : clampRgba(rgba),
  };
  const rest = state.points.filter((_, i) => i !== state.dragging);
  const points = sorted([...rest, moved]);
  return { ...state, points, dragging: points.indexOf(moved) };
}

/** End the gesture. Returns the new state plus the table to send; a
 * release without an active drag commits nothing. */
export function releaseDrag(state: TfEditorState): {
  state: TfEditorState;
  commit: TfPayload | null;
} {
  if (state.dragging === null) return { state, commit: null };
  const next = { ...state, dragging: null };
  return { state: next, commit: emitTable(next) };
}

export function setUnitExtinction(
  state: TfEditorState,
  unitExtinction: number,
): TfEditorState {
  if (!Number.isFinite(unitExtinction) || unitExtinction <= 0) return state;
  return { ...state, unitExtinction };
}

/** Piecewise-linear RGBA at one scalar value, extended flat past the
 * first and last control points. */
export function evaluate(state: TfEditorState, value: number): RgbaRow {
  const pts = state.points;
  const first = pts[0];
  const last = pts[pts.length - 1];
  if (first === undefined || last === undefined) return [0, 0, 0, 0];
  if (value <= first.position) return [...first.rgba];
  if (value >= last.position) return [...last.rgba];
  for (let i = 1; i < pts.length; i++) {
    const a = pts[i - 1]!;
    const b = pts[i]!;
    if (value > b.position) continue;
    const span = b.position - a.position;
    const t = span === 0 ? 1 : (value - a.position) / span;
    return [
      a.rgba[0] + t * (b.rgba[0] - a.rgba[0]),
      a.rgba[1] + t * (b.rgba[1] - a.rgba[1]),
      a.rgba[2] + t * (b.rgba[2] - a.rgba[2]),
      a.rgba[3] + t * (b.rgba[3] - a.rgba[3]),
    ];
  }
  return [...last.rgba];
}

/** Resample the control points into `entries` evenly spaced rows.
 * The result always satisfies the wire schema; emitting anything else
 * is a bug, so this validates before returning. */
export function emitTable(
  state: TfEditorState,
  entries: number = DEFAULT_TABLE_ENTRIES,
): TfPayload {
  if (!Number.isInteger(entries) || entries < 2) {
    throw new Error("a table needs at least two entries");
  }
  const [lo, hi] = state.domain;
  const rgba: RgbaRow[] = [];
  for (let i = 0; i < entries; i++) {
    const value = lo + (i * (hi - lo)) / (entries - 1);
    rgba.push(clampRgba(evaluate(state, value)));
  }
  return tfPayload.parse({
    domain: [lo, hi],
    rgba,
    unitExtinction: state.unitExtinction,
  });
}
