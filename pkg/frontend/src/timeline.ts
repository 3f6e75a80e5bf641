/** Timeline scrubber: slider position -> frame index -> debounced refetch. */

import { debounce, Debounced, PREVIEW_REFRESH_DEBOUNCE_MS } from "./debounce.js";
import { clampFrame } from "./session.js";

export class Timeline {
  private refresh: Debounced<[number]>;
  private current = 0;

  constructor(
    private readonly nFrames: number,
    onFrameChange: (t: number) => void,
    debounceMs: number = PREVIEW_REFRESH_DEBOUNCE_MS,
    setTimer: typeof setTimeout = setTimeout,
    clearTimer: typeof clearTimeout = clearTimeout,
  ) {
    this.refresh = debounce(onFrameChange, debounceMs, setTimer, clearTimer);
  }

  get frame(): number {
    return this.current;
  }

  /** Maps a normalized slider position [0,1] to a frame index. */
  scrubTo(position: number): number {
    const t = clampFrame(position * (this.nFrames - 1), this.nFrames);
    if (t !== this.current) {
      this.current = t;
      this.refresh(t);
    }
    return t;
  }

  /** Jumps directly to a frame (keyboard arrows), still debounced. */
  step(delta: number): number {
    const t = clampFrame(this.current + delta, this.nFrames);
    if (t !== this.current) {
      this.current = t;
      this.refresh(t);
    }
    return t;
  }

  /** Forces any pending refresh to run now (e.g. on pointer release). */
  settle(): void {
    this.refresh.flush();
  }

  dispose(): void {
    this.refresh.cancel();
  }
}
