import { describe, expect, it } from "vitest";

import {
  cameraPayload,
  datasetsReply,
  envelope,
  gridDimsPayload,
  methodPayload,
  parseServerMessage,
  tfPayload,
  validCombo,
  SAMPLERS,
  TRAVERSALS,
} from "../src/protocol.js";

const okCamera = {
  position: [0, 0, 5] as [number, number, number],
  lookAt: [0, 0, 0] as [number, number, number],
  up: [0, 1, 0] as [number, number, number],
  fovY: 45,
};

const okTf = {
  domain: [0, 1] as [number, number],
  rgba: [
    [0, 0, 0, 0],
    [1, 1, 1, 1],
  ] as [number, number, number, number][],
  unitExtinction: 3.125,
};

describe("outbound payload schemas", () => {
  it("wraps a valid edit in a v1 envelope", () => {
    const env = envelope("camera", okCamera);
    expect(env).toEqual({ v: 1, type: "camera", payload: okCamera });
  });

  it("rejects fovY outside (0, 180)", () => {
    expect(() => envelope("camera", { ...okCamera, fovY: 0 })).toThrow();
    expect(() => envelope("camera", { ...okCamera, fovY: 180 })).toThrow();
  });

  it("rejects unknown keys on strict payloads", () => {
    expect(
      cameraPayload.safeParse({ ...okCamera, stray: 1 }).success,
    ).toBe(false);
    expect(tfPayload.safeParse({ ...okTf, stray: 1 }).success).toBe(false);
  });

  it("rejects color components outside [0, 1]", () => {
    const bad = { ...okTf, rgba: [[0, 0, 0, 0], [1, 1, 1, 1.5]] };
    expect(tfPayload.safeParse(bad).success).toBe(false);
  });

  it("rejects single-row tables and reversed domains", () => {
    expect(tfPayload.safeParse({ ...okTf, rgba: [[0, 0, 0, 0]] }).success)
      .toBe(false);
    expect(tfPayload.safeParse({ ...okTf, domain: [1, 0] }).success)
      .toBe(false);
  });

  it("rejects non-positive unit extinction", () => {
    expect(tfPayload.safeParse({ ...okTf, unitExtinction: 0 }).success)
      .toBe(false);
    expect(tfPayload.safeParse({ ...okTf, unitExtinction: -2 }).success)
      .toBe(false);
  });

  it("only allows the direct sampler on the abr traversal", () => {
    for (const traversal of TRAVERSALS) {
      for (const sampler of SAMPLERS) {
        const parsed = methodPayload.safeParse({ traversal, sampler });
        expect(parsed.success).toBe(validCombo(traversal, sampler));
      }
    }
    expect(
      methodPayload.safeParse({ traversal: "grid-dda", sampler: "abr-direct" })
        .success,
    ).toBe(false);
  });

  it("bounds grid dims to [1, 512] integers", () => {
    expect(gridDimsPayload.safeParse({ dims: [1, 512, 32] }).success).toBe(true);
    expect(gridDimsPayload.safeParse({ dims: [0, 2, 2] }).success).toBe(false);
    expect(gridDimsPayload.safeParse({ dims: [513, 2, 2] }).success).toBe(false);
    expect(gridDimsPayload.safeParse({ dims: [2.5, 2, 2] }).success).toBe(false);
  });
});

describe("inbound message parsing", () => {
  it("parses the four server message types", () => {
    const frame = parseServerMessage(
      JSON.stringify({
        v: 1,
        type: "frame",
        generation: 3,
        spp: 1,
        width: 64,
        height: 64,
        encoding: "png",
        data: "aGk=",
      }),
    );
    expect(frame.ok).toBe(true);
    if (frame.ok) expect(frame.msg.type).toBe("frame");

    const ack = parseServerMessage(
      JSON.stringify({ v: 1, type: "ack", applied: "tf", generation: 4 }),
    );
    expect(ack.ok && ack.msg.type === "ack" && ack.msg.generation === 4).toBe(
      true,
    );

    const err = parseServerMessage(
      JSON.stringify({ v: 1, type: "error", message: "tf.rgba: bad" }),
    );
    expect(err.ok && err.msg.type === "error").toBe(true);

    const stats = parseServerMessage(
      JSON.stringify({ v: 1, type: "stats", generation: 3 }),
    );
    expect(stats.ok && stats.msg.type === "stats").toBe(true);
  });

  it("tolerates missing stats fields and unknown extras", () => {
    const res = parseServerMessage(
      JSON.stringify({
        v: 1,
        type: "stats",
        generation: 9,
        rays: 100,
        futureField: { anything: true },
      }),
    );
    expect(res.ok).toBe(true);
    if (res.ok && res.msg.type === "stats") {
      expect(res.msg.rays).toBe(100);
      expect(res.msg.spp).toBeUndefined();
    }
  });

  it("refuses other protocol versions", () => {
    const res = parseServerMessage(
      JSON.stringify({ v: 2, type: "ack", applied: "tf", generation: 1 }),
    );
    expect(res.ok).toBe(false);
  });

  it("flags unknown types and non-JSON without throwing", () => {
    const unknown = parseServerMessage(JSON.stringify({ v: 1, type: "warp" }));
    expect(unknown.ok).toBe(false);
    if (!unknown.ok) expect(unknown.reason).toContain("unknown");
    expect(parseServerMessage("}{ not json").ok).toBe(false);
    expect(parseServerMessage("42").ok).toBe(false);
  });
});

describe("dataset listing", () => {
  it("parses a registry reply", () => {
    const reply = datasetsReply.parse({
      v: 1,
      datasets: [
        {
          name: "teapot-in-stadium",
          cells: 1016,
          levels: 3,
          worldBounds: { lo: [0, 0, 0], hi: [32, 32, 32] },
          valueRange: [-0.3, 1.0],
          defaultTf: okTf,
        },
      ],
    });
    expect(reply.datasets[0]?.name).toBe("teapot-in-stadium");
  });
});
