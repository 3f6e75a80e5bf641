/** Brush gesture capture: decimated control points, one mutation per drag. */

export type Point = [number, number];

export const MIN_SAMPLE_SPACING_PX = 2;

/**
 * Collects pointer samples during one drag and reduces them to a polygonal
 * chain whose consecutive control points are at least `spacing` pixels
 * apart. The first and last samples are always kept so the stroke spans the
 * full gesture.
 */
export class GestureCapture {
  private samples: Point[] = [];
  private active = false;

  constructor(private readonly spacing: number = MIN_SAMPLE_SPACING_PX) {}

  get isActive(): boolean {
    return this.active;
  }

  start(x: number, y: number): void {
    this.samples = [[x, y]];
    this.active = true;
  }

  move(x: number, y: number): void {
    if (!this.active) return;
    const [px, py] = this.samples[this.samples.length - 1];
    if (Math.hypot(x - px, y - py) >= this.spacing) {
      this.samples.push([x, y]);
    }
  }

  /** Ends the gesture and returns the chain, or null if never started. */
  end(x: number, y: number): Point[] | null {
    if (!this.active) return null;
    this.active = false;
    const chain = this.samples;
    this.samples = [];
    const [px, py] = chain[chain.length - 1];
    if (x !== px || y !== py) {
      chain.push([x, y]);
    }
    return chain;
  }

  cancel(): void {
    this.active = false;
    this.samples = [];
  }
}

export function chainSpacingOk(chain: Point[], spacing: number): boolean {
  // interior points must honor the decimation distance; the final point is
  // exempt because the gesture endpoint is always kept
  for (let i = 1; i < chain.length - 1; i++) {
    const [ax, ay] = chain[i - 1];
    const [bx, by] = chain[i];
    if (Math.hypot(bx - ax, by - ay) < spacing) return false;
  }
  return true;
}
