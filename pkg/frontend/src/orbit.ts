/** Orbit camera: spherical coordinates around a fixed center.
 *
 * Pure state-in, state-out functions; the session throttles the
 * resulting camera payloads.
 */

import type { CameraPayload, DatasetDescriptor } from "./protocol.js";

export interface OrbitState {
  center: [number, number, number];
  distance: number;
  /** Radians around the +y axis; 0 looks down -z. */
  azimuth: number;
  /** Radians above the horizon, clamped inside (-pi/2, pi/2). */
  elevation: number;
  fovY: number;
}

const ELEVATION_LIMIT = Math.PI / 2 - 0.01;

export function initialOrbit(ds: DatasetDescriptor): OrbitState {
  const { lo, hi } = ds.worldBounds;
  const center: [number, number, number] = [
    (lo[0] + hi[0]) / 2,
    (lo[1] + hi[1]) / 2,
    (lo[2] + hi[2]) / 2,
  ];
  const dx = hi[0] - lo[0];
  const dy = hi[1] - lo[1];
  const dz = hi[2] - lo[2];
  const radius = Math.max(Math.sqrt(dx * dx + dy * dy + dz * dz) / 2, 1e-6);
  const fovY = 45;
  const distance = radius * (1 + 1.1 / Math.tan(((fovY / 2) * Math.PI) / 180));
  return { center, distance, azimuth: 0.6, elevation: 0.35, fovY };
}

/** One pointer drag step; dx/dy in radians-per-unit already applied by
 * the caller (typically pixels * sensitivity). */
export function dragOrbit(o: OrbitState, dAz: number, dEl: number): OrbitState {
  const elevation = Math.min(
    ELEVATION_LIMIT,
    Math.max(-ELEVATION_LIMIT, o.elevation + dEl),
  );
  return { ...o, azimuth: o.azimuth + dAz, elevation };
}

export function zoomOrbit(o: OrbitState, factor: number): OrbitState {
  return { ...o, distance: Math.max(1e-6, o.distance * factor) };
}

export function orbitCamera(o: OrbitState): CameraPayload {
  const ce = Math.cos(o.elevation);
  const position: [number, number, number] = [
    o.center[0] + o.distance * ce * Math.sin(o.azimuth),
    o.center[1] + o.distance * Math.sin(o.elevation),
    o.center[2] + o.distance * ce * Math.cos(o.azimuth),
  ];
  return {
    position,
    lookAt: [...o.center],
    up: [0, 1, 0],
    fovY: o.fovY,
  };
}
