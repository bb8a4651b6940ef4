/** Frame-accurate playback clock over a growing frame buffer. */

export class Timeline {
  private playing = false;
  private cursor = 0; // fractional frame index
  private lastTickMs: number | null = null;

  constructor(
    readonly frameRateHz: number,
    private frameCount: () => number,
    public loop = true,
  ) {}

  get isPlaying(): boolean {
    return this.playing;
  }

  /** Current integer frame to display. */
  get frame(): number {
    const n = this.frameCount();
    if (n === 0) return 0;
    return Math.min(n - 1, Math.floor(this.cursor));
  }

  play(): void {
    this.playing = true;
    this.lastTickMs = null;
  }

  pause(): void {
    this.playing = false;
    this.lastTickMs = null;
  }

  seek(frame: number): void {
    const n = this.frameCount();
    this.cursor = Math.max(0, Math.min(n === 0 ? 0 : n - 1, frame));
  }

  /** Advance by wall-clock time; returns the frame to display. */
  tick(nowMs: number): number {
    if (this.playing) {
      if (this.lastTickMs !== null) {
        const dt = (nowMs - this.lastTickMs) / 1000;
        this.cursor += dt * this.frameRateHz;
        const n = this.frameCount();
        if (n > 0 && this.cursor >= n) {
          if (this.loop) {
            this.cursor = this.cursor % n;
          } else {
            this.cursor = n - 1;
            this.pause();
          }
        }
      }
      this.lastTickMs = nowMs;
    }
    return this.frame;
  }
}
