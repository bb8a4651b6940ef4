import { describe, expect, it } from "vitest";

import { makeTarget, PRESETS, yawRot6 } from "../src/presets.js";
import { mockSkeleton } from "./mock_service.js";
import type { Rot6 } from "../src/types.js";

const IDENTITY: Rot6 = [0, 1, 0, 0, 0, 1];

describe("yawRot6", () => {
  it("is the identity at theta=0", () => {
    const r = yawRot6(IDENTITY, 0);
    r.forEach((v, i) => expect(v).toBeCloseTo(IDENTITY[i]!, 12));
  });

  it("turns forward (+z) to +x at a quarter turn, leaving up alone", () => {
    const r = yawRot6(IDENTITY, Math.PI / 2);
    expect(r[0]).toBeCloseTo(0, 12);
    expect(r[1]).toBeCloseTo(1, 12);
    expect(r[2]).toBeCloseTo(0, 12);
    expect(r[3]).toBeCloseTo(1, 12); // forward.x
    expect(r[4]).toBeCloseTo(0, 12);
    expect(r[5]).toBeCloseTo(0, 12); // forward.z
  });

  it("preserves column norms and orthogonality for arbitrary angles", () => {
    for (const theta of [0.37, -1.9, 2.6]) {
      const r = yawRot6(IDENTITY, theta);
      const up = [r[0], r[1], r[2]];
      const fwd = [r[3], r[4], r[5]];
      const norm = (v: number[]) => Math.hypot(v[0]!, v[1]!, v[2]!);
      const dot = up[0]! * fwd[0]! + up[1]! * fwd[1]! + up[2]! * fwd[2]!;
      expect(norm(up)).toBeCloseTo(1, 12);
      expect(norm(fwd)).toBeCloseTo(1, 12);
      expect(dot).toBeCloseTo(0, 12);
    }
  });

  it("composes like angles add", () => {
    const a = yawRot6(yawRot6(IDENTITY, 0.4), 0.7);
    const b = yawRot6(IDENTITY, 1.1);
    a.forEach((v, i) => expect(v).toBeCloseTo(b[i]!, 12));
  });
});

describe("makeTarget", () => {
  const rest = mockSkeleton().rest_pose;

  it("displaces the hip on the ground plane only", () => {
    const t = makeTarget(rest, { name: "x", dxCm: 30, dzCm: -10, yawRad: 0 });
    expect(t.hip_position_cm[0]).toBeCloseTo(rest.hip_position_cm[0] + 30, 12);
    expect(t.hip_position_cm[1]).toBe(rest.hip_position_cm[1]);
    expect(t.hip_position_cm[2]).toBeCloseTo(rest.hip_position_cm[2] - 10, 12);
  });

  it("yaws only the hip rotation and deep-copies the rest", () => {
    const t = makeTarget(rest, {
      name: "x",
      dxCm: 0,
      dzCm: 0,
      yawRad: Math.PI / 2,
    });
    expect(t.rotations_6d[0]![3]).toBeCloseTo(1, 12);
    for (let j = 1; j < rest.rotations_6d.length; j++) {
      expect(t.rotations_6d[j]).toEqual(rest.rotations_6d[j]);
      expect(t.rotations_6d[j]).not.toBe(rest.rotations_6d[j]);
    }
  });

  it("ships distinct, named presets", () => {
    expect(PRESETS.length).toBeGreaterThanOrEqual(5);
    const names = new Set(PRESETS.map((p) => p.name));
    expect(names.size).toBe(PRESETS.length);
    for (const p of PRESETS) {
      expect(Math.abs(p.dxCm) + Math.abs(p.dzCm)).toBeGreaterThan(0);
    }
  });
});
