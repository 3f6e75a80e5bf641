/** Client-side editor session: the single mutable state of the UI.
 *
 * The session is reconstructible from server state alone (`sync`); local
 * fields only cache what the server reports plus the user's tool cursor.
 */

import {
  ApiClient,
  EditKind,
  EditRequest,
  EditSummary,
  Layer,
  TrackPoint,
} from "./api.js";
import { Point } from "./brush.js";

export type Tool = "brush" | "adjust-brush" | "texture" | "track";

export interface ToolParams {
  color: [number, number, number];
  width: number;
  deltas: [number, number, number]; // brightness, saturation, hue(deg)
  layer: Layer;
}

export interface SessionState {
  projectId: string;
  frame: number;
  nFrames: number;
  tool: Tool;
  params: ToolParams;
  visibility: Record<EditKind, boolean>;
  edits: EditSummary[];
  version: number;
  projectState: string;
  trajectory: TrackPoint[] | null;
}

const DEFAULT_PARAMS: ToolParams = {
  color: [1, 0, 0],
  width: 0.01,
  deltas: [0, 0, 0],
  layer: "fg",
};

export class EditorSession {
  readonly state: SessionState;
  private mutationInFlight = false;

  constructor(
    private readonly api: ApiClient,
    projectId: string,
    nFrames: number,
  ) {
    this.state = {
      projectId,
      frame: 0,
      nFrames,
      tool: "brush",
      params: { ...DEFAULT_PARAMS },
      visibility: { sketch: true, metadata: true, texture: true },
      edits: [],
      version: 0,
      projectState: "created",
      trajectory: null,
    };
  }

  /** Rebuild all mirrored state from the server (used on load / reload). */
  async sync(): Promise<void> {
    const status = await this.api.projectStatus(this.state.projectId);
    this.state.projectState = status.state;
    this.state.nFrames = status.n_frames;
    this.state.frame = clampFrame(this.state.frame, status.n_frames);
    const listing = await this.api.listEdits(this.state.projectId);
    this.state.edits = listing.edits;
    this.state.visibility = listing.visibility;
    this.state.version = listing.version;
  }

  get editable(): boolean {
    return this.state.projectState === "ready";
  }

  setFrame(t: number): number {
    this.state.frame = clampFrame(t, this.state.nFrames);
    return this.state.frame;
  }

  setTool(tool: Tool): void {
    this.state.tool = tool;
  }

  /** One gesture -> at most one server mutation; rejects overlapping sends. */
  private async mutate<T extends { version: number }>(
    run: () => Promise<T>,
  ): Promise<T> {
    if (this.mutationInFlight) {
      throw new Error("mutation already in flight for this gesture");
    }
    this.mutationInFlight = true;
    try {
      const out = await run();
      if (out.version < this.state.version) {
        throw new Error(
          `server version went backwards: ${out.version} < ${this.state.version}`,
        );
      }
      this.state.version = out.version;
      return out;
    } finally {
      this.mutationInFlight = false;
    }
  }

  async submitStroke(chain: Point[]): Promise<string> {
    const p = this.state.params;
    const common = {
      layer: p.layer,
      frame: this.state.frame,
      space: "frame" as const,
      points: chain,
      width: p.width,
    };
    const edit: EditRequest =
      this.state.tool === "adjust-brush"
        ? { kind: "metadata", deltas: p.deltas, ...common }
        : { kind: "sketch", color: p.color, ...common };
    const out = await this.mutate(() =>
      this.api.addEdit(this.state.projectId, edit),
    );
    this.state.edits.push({ id: out.id, kind: edit.kind });
    return out.id;
  }

  async submitAtlasStroke(chain: Point[]): Promise<string> {
    const p = this.state.params;
    const out = await this.mutate(() =>
      this.api.addEdit(this.state.projectId, {
        kind: "sketch",
        layer: p.layer,
        space: "atlas",
        points: chain,
        color: p.color,
        width: p.width,
      }),
    );
    this.state.edits.push({ id: out.id, kind: "sketch" });
    return out.id;
  }

  async submitTexture(
    anchor: Point,
    size: [number, number],
    pngBase64: string,
    mode: "atlas-warped" | "point-tracked" = "atlas-warped",
  ): Promise<string> {
    const out = await this.mutate(() =>
      this.api.addEdit(this.state.projectId, {
        kind: "texture",
        layer: this.state.params.layer,
        mode,
        anchor,
        size,
        image_png_base64: pngBase64,
      }),
    );
    this.state.edits.push({ id: out.id, kind: "texture" });
    return out.id;
  }

  async removeEdit(editId: string): Promise<void> {
    await this.mutate(() => this.api.removeEdit(this.state.projectId, editId));
    this.state.edits = this.state.edits.filter((e) => e.id !== editId);
  }

  async toggleVisibility(kind: EditKind): Promise<boolean> {
    const next = !this.state.visibility[kind];
    await this.mutate(() =>
      this.api.setVisibility(this.state.projectId, kind, next),
    );
    this.state.visibility[kind] = next;
    return next;
  }

  async trackAt(x: number, y: number): Promise<TrackPoint[]> {
    const traj = await this.api.track(
      this.state.projectId,
      x,
      y,
      this.state.frame,
      this.state.params.layer,
    );
    this.state.trajectory = traj;
    return traj;
  }

  /** Overlay position of the active trajectory at frame t, if any. */
  trajectoryAt(t: number): TrackPoint | null {
    return this.state.trajectory?.find((p) => p.t === t) ?? null;
  }
}

export function clampFrame(t: number, nFrames: number): number {
  if (!Number.isFinite(t)) return 0;
  return Math.min(Math.max(Math.round(t), 0), Math.max(nFrames - 1, 0));
}
