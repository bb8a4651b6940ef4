/** Target-pose presets derived from the service's rest pose.
 *
 * A preset displaces the hip on the ground plane and optionally turns
 * the character about the vertical axis. Under a yaw by theta the 6D
 * rotation's up column [0,1,0] is unchanged and the forward column
 * rotates in the XZ plane, so only the hip rotation needs editing.
 */

import type { Pose, Rot6, Vec3 } from "./types.js";

export interface PresetSpec {
  name: string;
  dxCm: number;
  dzCm: number;
  yawRad: number;
}

export const PRESETS: PresetSpec[] = [
  { name: "step forward", dxCm: 0, dzCm: 40, yawRad: 0 },
  { name: "long stride", dxCm: 0, dzCm: 90, yawRad: 0 },
  { name: "side step", dxCm: 50, dzCm: 0, yawRad: 0 },
  { name: "quarter turn left", dxCm: 30, dzCm: 30, yawRad: Math.PI / 2 },
  { name: "about face", dxCm: 0, dzCm: 60, yawRad: Math.PI },
];

export function yawRot6(r: Rot6, theta: number): Rot6 {
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  // rotate both embedded columns about +Y: (x, z) -> (c x + s z, -s x + c z)
  const rot = (x: number, y: number, z: number): Vec3 => [
    c * x + s * z,
    y,
    -s * x + c * z,
  ];
  const up = rot(r[0], r[1], r[2]);
  const fwd = rot(r[3], r[4], r[5]);
  return [up[0], up[1], up[2], fwd[0], fwd[1], fwd[2]];
}

export function makeTarget(rest: Pose, spec: PresetSpec): Pose {
  const hip = rest.hip_position_cm;
  const rotations = rest.rotations_6d.map((r, j) =>
    j === 0 ? yawRot6(r, spec.yawRad) : ([...r] as Rot6),
  );
  return {
    hip_position_cm: [hip[0] + spec.dxCm, hip[1], hip[2] + spec.dzCm],
    rotations_6d: rotations,
  };
}
