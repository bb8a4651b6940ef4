/** Session-chaining playback buffer.
 *
 * The service returns exactly `duration_frames` records per call; a
 * continuation's first record repeats the junction frame verbatim.
 * The buffer therefore appends whole segments on creation and
 * `frames.slice(1)` on continuations, and verifies the junction so a
 * server/client mismatch surfaces immediately instead of as a visual
 * pop.
 */

import type { ApiClient } from "./api.js";
import type { FrameRecord, Pose } from "./types.js";

export const DURATION_MIN = 2;
export const DURATION_MAX = 120; // UI slider bound, well under the API's 1000

export const JUNCTION_TOL_CM = 1e-3;

export function clampDuration(n: number): number {
  const i = Math.round(n);
  return Math.min(DURATION_MAX, Math.max(DURATION_MIN, i));
}

/** Largest per-coordinate distance between two recorded skeleton
 * poses, in cm. */
export function maxJointDelta(a: FrameRecord, b: FrameRecord): number {
  if (a.positions_cm.length !== b.positions_cm.length) {
    return Number.POSITIVE_INFINITY;
  }
  let worst = 0;
  for (let j = 0; j < a.positions_cm.length; j++) {
    const pa = a.positions_cm[j]!;
    const pb = b.positions_cm[j]!;
    for (let k = 0; k < 3; k++) {
      worst = Math.max(worst, Math.abs(pa[k]! - pb[k]!));
    }
  }
  return worst;
}

export interface SegmentInfo {
  segmentIndex: number;
  frameCount: number;
  extrapolation: boolean;
  junctionDeltaCm: number;
}

export class ChainController {
  readonly frames: FrameRecord[] = [];
  readonly segments: SegmentInfo[] = [];
  private session: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly seed: number = 0,
  ) {}

  get sessionToken(): string | null {
    return this.session;
  }

  /** Last played pose, i.e. where the next segment will start. */
  get lastFrame(): FrameRecord | null {
    return this.frames.length ? this.frames[this.frames.length - 1]! : null;
  }

  reset(): void {
    this.frames.length = 0;
    this.segments.length = 0;
    this.session = null;
  }

  /** Open the session (first call) or extend it (later calls); returns
   * the frames appended to the playback buffer. */
  async extend(
    startPose: Pose,
    targetPose: Pose,
    duration: number,
  ): Promise<FrameRecord[]> {
    const d = clampDuration(duration);
    const resp =
      this.session === null
        ? await this.api.chain({
            start_pose: startPose,
            target_pose: targetPose,
            duration_frames: d,
            seed: this.seed,
          })
        : await this.api.chain({
            session: this.session,
            target_pose: targetPose,
            duration_frames: d,
          });

    let junctionDelta = 0;
    let appended: FrameRecord[];
    if (this.session === null) {
      this.session = resp.session;
      appended = resp.frames;
    } else {
      const junction = resp.frames[0]!;
      junctionDelta = maxJointDelta(this.lastFrame!, junction);
      if (junctionDelta > JUNCTION_TOL_CM) {
        throw new Error(
          `chain discontinuity: junction moved ${junctionDelta} cm`,
        );
      }
      appended = resp.frames.slice(1);
    }
    this.frames.push(...appended);
    this.segments.push({
      segmentIndex: resp.segment_index,
      frameCount: resp.frame_count,
      extrapolation: resp.extrapolation_flag,
      junctionDeltaCm: junctionDelta,
    });
    return appended;
  }
}
