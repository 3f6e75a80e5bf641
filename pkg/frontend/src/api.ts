/** Typed client for the project service REST + server-sent-events API. */

export type Layer = "fg" | "bg";
export type EditKind = "sketch" | "metadata" | "texture";

export interface ProjectStatus {
  id: string;
  state: string;
  width: number;
  height: number;
  n_frames: number;
  version?: number;
  error?: string | null;
}

export interface EditSummary {
  id: string;
  kind: EditKind;
}

export interface EditListing {
  version: number;
  visibility: Record<EditKind, boolean>;
  edits: EditSummary[];
}

export interface SketchEditRequest {
  kind: "sketch";
  layer: Layer;
  frame?: number;
  space: "frame" | "atlas";
  points: [number, number][];
  color: [number, number, number];
  width: number;
}

export interface MetadataEditRequest {
  kind: "metadata";
  layer: Layer;
  frame?: number;
  space: "frame" | "atlas";
  points: [number, number][];
  deltas: [number, number, number];
  width: number;
}

export interface TextureEditRequest {
  kind: "texture";
  layer: Layer;
  mode: "atlas-warped" | "point-tracked";
  anchor: [number, number];
  size: [number, number];
  image_png_base64: string;
  alpha_multiply?: boolean;
}

export type EditRequest =
  | SketchEditRequest
  | MetadataEditRequest
  | TextureEditRequest;

export interface TrackPoint {
  t: number;
  x: number;
  y: number;
  out_of_frame: boolean;
}

export interface TrainRequest {
  iters_forward?: number;
  iters_inverse?: number;
  batch?: number;
  seed?: number;
  early_stop?: boolean;
  desk_profile?: boolean;
}

export type ServerEvent =
  | { type: "state"; state: string; version?: number; error?: string }
  | {
      type: "progress";
      phase: string;
      iteration: number;
      losses: Record<string, number>;
      iters_per_sec: number;
    }
  | { type: "snapshot"; iteration?: number }
  | { type: "edits"; version: number; id?: string };

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (...a) => fetch(...a),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        detail = body.detail ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  createSyntheticProject(
    spec: Record<string, unknown>,
  ): Promise<{ id: string; state: string }> {
    return this.post("/projects", { synthetic: spec });
  }

  projectStatus(pid: string): Promise<ProjectStatus> {
    return this.request(`/projects/${pid}`);
  }

  startTraining(pid: string, req: TrainRequest): Promise<{ state: string }> {
    return this.post(`/projects/${pid}/train`, req);
  }

  listEdits(pid: string): Promise<EditListing> {
    return this.request(`/projects/${pid}/edits`);
  }

  addEdit(
    pid: string,
    edit: EditRequest,
  ): Promise<{ id: string; version: number }> {
    return this.post(`/projects/${pid}/edits`, edit);
  }

  removeEdit(pid: string, editId: string): Promise<{ version: number }> {
    return this.request(`/projects/${pid}/edits/${editId}`, {
      method: "DELETE",
    });
  }

  setVisibility(
    pid: string,
    kind: EditKind,
    visible: boolean,
  ): Promise<{ version: number }> {
    return this.post(`/projects/${pid}/visibility`, { kind, visible });
  }

  track(
    pid: string,
    x: number,
    y: number,
    t: number,
    layer: Layer,
  ): Promise<TrackPoint[]> {
    return this.post(`/projects/${pid}/track`, { x, y, t, layer });
  }

  /** URL for the (optionally edited) frame PNG; bump `cacheKey` on mutation. */
  frameUrl(pid: string, t: number, edited: boolean, cacheKey = 0): string {
    return `${this.base}/projects/${pid}/frames/${t}?edited=${edited}&v=${cacheKey}`;
  }

  atlasUrl(
    pid: string,
    layer: Layer,
    edits: boolean,
    resolution: number,
    cacheKey = 0,
  ): string {
    return (
      `${this.base}/projects/${pid}/atlas?layer=${layer}` +
      `&edits=${edits}&resolution=${resolution}&v=${cacheKey}`
    );
  }

  eventsUrl(pid: string): string {
    return `${this.base}/projects/${pid}/events`;
  }
}
