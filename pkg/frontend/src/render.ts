/** Canvas stick-figure rendering: orthographic projection with an
 * orbiting azimuth, bones drawn parent-to-child, ground grid in cm. */

import type { FrameRecord, Vec3 } from "./types.js";

export interface Camera {
  azimuthRad: number; // orbit about +Y
  scale: number; // pixels per cm
  centerCm: Vec3; // world point mapped to the canvas anchor
  width: number;
  height: number;
}

export function defaultCamera(width: number, height: number): Camera {
  return {
    azimuthRad: Math.PI / 6,
    scale: 2.2,
    centerCm: [0, 90, 0],
    width,
    height,
  };
}

/** World cm -> canvas pixels (y up -> screen y down); returns depth
 * too so callers can shade far limbs. */
export function project(p: Vec3, cam: Camera): [number, number, number] {
  const c = Math.cos(cam.azimuthRad);
  const s = Math.sin(cam.azimuthRad);
  const x = p[0] - cam.centerCm[0];
  const y = p[1] - cam.centerCm[1];
  const z = p[2] - cam.centerCm[2];
  const rx = c * x - s * z;
  const rz = s * x + c * z;
  return [
    cam.width / 2 + rx * cam.scale,
    cam.height / 2 - y * cam.scale,
    rz,
  ];
}

/** (parent, child) index pairs; the root has parent -1 and draws no
 * bone. */
export function bonePairs(parents: number[]): Array<[number, number]> {
  const pairs: Array<[number, number]> = [];
  parents.forEach((par, j) => {
    if (par >= 0) pairs.push([par, j]);
  });
  return pairs;
}

/** Minimal 2D-context surface the renderer needs (testable without a
 * browser canvas). */
export interface Stroker {
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(
    x: number,
    y: number,
    r: number,
    a0: number,
    a1: number,
  ): void;
  fill(): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
}

export function drawFrame(
  ctx: Stroker,
  frame: FrameRecord,
  parents: number[],
  cam: Camera,
  color = "#27b",
): number {
  let drawn = 0;
  ctx.lineWidth = 2;
  ctx.strokeStyle = color;
  for (const [par, j] of bonePairs(parents)) {
    const a = project(frame.positions_cm[par]!, cam);
    const b = project(frame.positions_cm[j]!, cam);
    ctx.beginPath();
    ctx.moveTo(a[0], a[1]);
    ctx.lineTo(b[0], b[1]);
    ctx.stroke();
    drawn++;
  }
  ctx.fillStyle = color;
  for (const p of frame.positions_cm) {
    const q = project(p, cam);
    ctx.beginPath();
    ctx.arc(q[0], q[1], 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
  return drawn;
}

export function drawGround(
  ctx: Stroker,
  cam: Camera,
  halfExtentCm = 200,
  stepCm = 50,
): void {
  ctx.lineWidth = 1;
  ctx.strokeStyle = "#ddd";
  for (let u = -halfExtentCm; u <= halfExtentCm; u += stepCm) {
    for (const [a, b] of [
      [
        [u, 0, -halfExtentCm],
        [u, 0, halfExtentCm],
      ],
      [
        [-halfExtentCm, 0, u],
        [halfExtentCm, 0, u],
      ],
    ] as Array<[Vec3, Vec3]>) {
      const pa = project(a, cam);
      const pb = project(b, cam);
      ctx.beginPath();
      ctx.moveTo(pa[0], pa[1]);
      ctx.lineTo(pb[0], pb[1]);
      ctx.stroke();
    }
  }
}
