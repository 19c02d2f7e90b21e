/** Wire schemas for the frame-streaming service, protocol v1.
 *
 * Everything the viewer sends or receives is validated here. Outbound
 * payloads are checked before they leave (a client bug should fail
 * loudly client-side); inbound messages are parsed leniently so a
 * missing stats field degrades to a gap in the panel, never a crash.
 */

import { z } from "zod";

export const PROTOCOL_VERSION = 1;

export const TRAVERSALS = [
  "abr-bvh",
  "brick-kd",
  "brick-bvh",
  "grid-dda",
  "grid-bvh",
] as const;
export type Traversal = (typeof TRAVERSALS)[number];

export const SAMPLERS = ["abr", "abr-direct", "ext-brick"] as const;
export type Sampler = (typeof SAMPLERS)[number];

export const MODES = ["dl", "ms"] as const;
export type Mode = (typeof MODES)[number];

/** The direct sampler reads the partition id off the ABR walk; every
 * other pairing is free. */
export function validCombo(traversal: Traversal, sampler: Sampler): boolean {
  return sampler !== "abr-direct" || traversal === "abr-bvh";
}

const vec3 = z.tuple([z.number(), z.number(), z.number()]);
const unitComponent = z.number().min(0).max(1);

export const rgbaRow = z.tuple([
  unitComponent,
  unitComponent,
  unitComponent,
  unitComponent,
]);
export type RgbaRow = z.infer<typeof rgbaRow>;

// ---------------------------------------------------------------------------
// client -> server payloads

export const cameraPayload = z
  .object({
    position: vec3,
    lookAt: vec3,
    up: vec3,
    fovY: z.number().gt(0).lt(180),
  })
  .strict();
export type CameraPayload = z.infer<typeof cameraPayload>;

export const tfPayload = z
  .object({
    domain: z
      .tuple([z.number().finite(), z.number().finite()])
      .refine(([lo, hi]) => lo < hi, "domain must be increasing"),
    rgba: z.array(rgbaRow).min(2),
    unitExtinction: z.number().positive().finite(),
  })
  .strict();
export type TfPayload = z.infer<typeof tfPayload>;

export const methodPayload = z
  .object({
    traversal: z.enum(TRAVERSALS),
    sampler: z.enum(SAMPLERS),
  })
  .strict()
  .refine(
    (p) => validCombo(p.traversal, p.sampler),
    "abr-direct needs the abr-bvh traversal",
  );
export type MethodPayload = z.infer<typeof methodPayload>;

export const modePayload = z.object({ mode: z.enum(MODES) }).strict();
export type ModePayload = z.infer<typeof modePayload>;

export const gridDimsPayload = z
  .object({
    dims: z.tuple([
      z.number().int().min(1).max(512),
      z.number().int().min(1).max(512),
      z.number().int().min(1).max(512),
    ]),
  })
  .strict();
export type GridDimsPayload = z.infer<typeof gridDimsPayload>;

const payloadByType = {
  camera: cameraPayload,
  tf: tfPayload,
  method: methodPayload,
  mode: modePayload,
  gridDims: gridDimsPayload,
} as const;
export type EditType = keyof typeof payloadByType;

export interface Envelope {
  v: typeof PROTOCOL_VERSION;
  type: EditType;
  payload: unknown;
}

/** Validate and wrap one outbound edit. Throws on schema violations:
 * an invalid envelope is a viewer bug, not a user error. */
export function envelope<T extends EditType>(
  type: T,
  payload: z.infer<(typeof payloadByType)[T]>,
): Envelope {
  const checked = payloadByType[type].parse(payload);
  return { v: PROTOCOL_VERSION, type, payload: checked };
}

// ---------------------------------------------------------------------------
// server -> client messages

export const ackMessage = z.object({
  v: z.literal(PROTOCOL_VERSION),
  type: z.literal("ack"),
  applied: z.string(),
  generation: z.number().int(),
});
export type AckMessage = z.infer<typeof ackMessage>;

export const errorMessage = z.object({
  v: z.literal(PROTOCOL_VERSION),
  type: z.literal("error"),
  message: z.string(),
});
export type ErrorMessage = z.infer<typeof errorMessage>;

export const frameMessage = z.object({
  v: z.literal(PROTOCOL_VERSION),
  type: z.literal("frame"),
  generation: z.number().int(),
  spp: z.number().int().min(1),
  width: z.number().int().min(1),
  height: z.number().int().min(1),
  encoding: z.literal("png"),
  data: z.string(),
});
export type FrameMessage = z.infer<typeof frameMessage>;

/** Stats arrive leniently: only the envelope fields are required, every
 * measurement may be absent and renders as a gap. */
export const statsMessage = z
  .object({
    v: z.literal(PROTOCOL_VERSION),
    type: z.literal("stats"),
    generation: z.number().int(),
    spp: z.number().int().optional(),
    rays: z.number().int().optional(),
    raysPerSecond: z.number().optional(),
    meanPartitionsPerRay: z.number().optional(),
    meanNullCollisions: z.number().optional(),
    histograms: z
      .object({
        partitionsPerRay: z.array(z.number().int()).optional(),
        samplesPerPartition: z.array(z.number().int()).optional(),
      })
      .optional(),
  })
  .passthrough();
export type StatsMessage = z.infer<typeof statsMessage>;

export type ServerMessage =
  | AckMessage
  | ErrorMessage
  | FrameMessage
  | StatsMessage;

export type ParseResult =
  | { ok: true; msg: ServerMessage }
  | { ok: false; reason: string };

export function parseServerMessage(text: string): ParseResult {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return { ok: false, reason: "not JSON" };
  }
  if (typeof raw !== "object" || raw === null || !("type" in raw)) {
    return { ok: false, reason: "no message type" };
  }
  const type = (raw as { type: unknown }).type;
  const schema =
    type === "ack"
      ? ackMessage
      : type === "error"
        ? errorMessage
        : type === "frame"
          ? frameMessage
          : type === "stats"
            ? statsMessage
            : null;
  if (schema === null) {
    return { ok: false, reason: `unknown message type ${String(type)}` };
  }
  const parsed = schema.safeParse(raw);
  if (!parsed.success) {
    return { ok: false, reason: parsed.error.issues[0]?.message ?? "invalid" };
  }
  return { ok: true, msg: parsed.data as ServerMessage };
}

// ---------------------------------------------------------------------------
// GET /datasets

export const datasetDescriptor = z
  .object({
    name: z.string(),
    cells: z.number().int(),
    levels: z.number().int(),
    worldBounds: z.object({ lo: vec3, hi: vec3 }),
    valueRange: z.tuple([z.number(), z.number()]),
    defaultTf: tfPayload,
  })
  .passthrough();
export type DatasetDescriptor = z.infer<typeof datasetDescriptor>;

export const datasetsReply = z
  .object({
    v: z.literal(PROTOCOL_VERSION),
    datasets: z.array(datasetDescriptor),
  })
  .passthrough();
export type DatasetsReply = z.infer<typeof datasetsReply>;
