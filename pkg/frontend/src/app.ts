/** Viewer application: skeleton load, transition requests, playback,
 * and chaining. DOM-free so tests can drive it with a stub canvas
 * context; bootstrap() does the real page wiring. */

import { ApiClient } from "./api.js";
import { ChainController, clampDuration } from "./chain.js";
import { PRESETS, makeTarget, type PresetSpec } from "./presets.js";
import {
  defaultCamera,
  drawFrame,
  drawGround,
  type Camera,
  type Stroker,
} from "./render.js";
import { Timeline } from "./timeline.js";
import type { FrameRecord, SkeletonInfo } from "./types.js";

export class ViewerApp {
  skeleton: SkeletonInfo | null = null;
  chain: ChainController;
  timeline: Timeline | null = null;
  camera: Camera;
  lastExtrapolation = false;

  constructor(
    readonly api: ApiClient,
    width = 640,
    height = 480,
    seed = 0,
  ) {
    this.chain = new ChainController(api, seed);
    this.camera = defaultCamera(width, height);
  }

  get frames(): FrameRecord[] {
    return this.chain.frames;
  }

  async loadSkeleton(): Promise<SkeletonInfo> {
    this.skeleton = await this.api.skeleton();
    this.timeline = new Timeline(
      this.skeleton.frame_rate_hz,
      () => this.frames.length,
    );
    return this.skeleton;
  }

  /** Request one transition toward a preset target; the first call
   * starts from the rest pose, later calls continue the session. */
  async requestSegment(
    preset: PresetSpec,
    duration: number,
  ): Promise<FrameRecord[]> {
    if (!this.skeleton) throw new Error("skeleton not loaded");
    const rest = this.skeleton.rest_pose;
    const last = this.chain.lastFrame;
    const start =
      last === null
        ? rest
        : {
            hip_position_cm: last.positions_cm[0]!,
            rotations_6d: last.rotations_6d,
          };
    // presets displace relative to where the character currently is
    const anchored = makeTarget(
      { ...rest, hip_position_cm: start.hip_position_cm },
      preset,
    );
    const added = await this.chain.extend(
      rest,
      anchored,
      clampDuration(duration),
    );
    const seg = this.chain.segments[this.chain.segments.length - 1]!;
    this.lastExtrapolation = seg.extrapolation;
    return added;
  }

  /** Draw one buffered frame; returns the number of bones drawn. */
  renderFrame(ctx: Stroker, index: number): number {
    if (!this.skeleton) throw new Error("skeleton not loaded");
    const frame = this.frames[index];
    if (!frame) return 0;
    drawGround(ctx, this.camera);
    this.camera.centerCm = [
      frame.positions_cm[0]![0],
      this.camera.centerCm[1],
      frame.positions_cm[0]![2],
    ];
    return drawFrame(ctx, frame, this.skeleton.parents, this.camera);
  }
}

/** Real page wiring; only called from index.html. */
export async function bootstrap(doc: Document): Promise<ViewerApp> {
  const canvas = doc.getElementById("stage") as HTMLCanvasElement;
  const status = doc.getElementById("status") as HTMLElement;
  const durationInput = doc.getElementById("duration") as HTMLInputElement;
  const durationLabel = doc.getElementById("duration-label") as HTMLElement;
  const presetSelect = doc.getElementById("preset") as HTMLSelectElement;
  const goButton = doc.getElementById("go") as HTMLButtonElement;
  const playButton = doc.getElementById("play") as HTMLButtonElement;
  const resetButton = doc.getElementById("reset") as HTMLButtonElement;
  const scrub = doc.getElementById("scrub") as HTMLInputElement;

  const app = new ViewerApp(new ApiClient(""), canvas.width, canvas.height);
  const ctx = canvas.getContext("2d") as unknown as Stroker & {
    clearRect(x: number, y: number, w: number, h: number): void;
  };

  for (const [i, preset] of PRESETS.entries()) {
    const opt = doc.createElement("option");
    opt.value = String(i);
    opt.textContent = preset.name;
    presetSelect.appendChild(opt);
  }
  durationInput.addEventListener("input", () => {
    durationLabel.textContent = `${clampDuration(Number(durationInput.value))} frames`;
  });

  try {
    const sk = await app.loadSkeleton();
    status.textContent = `${sk.joint_count} joints @ ${sk.frame_rate_hz} Hz`;
  } catch (err) {
    status.textContent = `service unavailable: ${String(err)}`;
    return app;
  }

  goButton.addEventListener("click", () => {
    void (async () => {
      goButton.disabled = true;
      try {
        const preset = PRESETS[Number(presetSelect.value)]!;
        await app.requestSegment(preset, Number(durationInput.value));
        scrub.max = String(Math.max(0, app.frames.length - 1));
        status.textContent =
          `${app.frames.length} frames buffered` +
          (app.lastExtrapolation ? " (extrapolating)" : "");
        app.timeline?.play();
      } catch (err) {
        status.textContent = String(err);
      } finally {
        goButton.disabled = false;
      }
    })();
  });

  playButton.addEventListener("click", () => {
    if (!app.timeline) return;
    if (app.timeline.isPlaying) {
      app.timeline.pause();
      playButton.textContent = "play";
    } else {
      app.timeline.play();
      playButton.textContent = "pause";
    }
  });

  resetButton.addEventListener("click", () => {
    app.chain.reset();
    scrub.max = "0";
    status.textContent = "cleared";
  });

  scrub.addEventListener("input", () => {
    app.timeline?.pause();
    app.timeline?.seek(Number(scrub.value));
  });

  const loop = (now: number) => {
    const frame = app.timeline ? app.timeline.tick(now) : 0;
    if (app.frames.length) {
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      app.renderFrame(ctx, frame);
      if (app.timeline?.isPlaying) scrub.value = String(frame);
    }
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);
  return app;
}
