/** DOM wiring: binds the canvas, timeline, panels and toolbar together.
 *
 * All editing logic lives in the imported modules; this file only translates
 * browser events into calls on them.
 */

import { ApiClient } from "./api.js";
import { GestureCapture, Point } from "./brush.js";
import { debounce, PREVIEW_REFRESH_DEBOUNCE_MS } from "./debounce.js";
import { applyEvent, initialProgress, subscribe } from "./events.js";
import { EditorSession, Tool } from "./session.js";
import { Timeline } from "./timeline.js";

interface Elements {
  frameCanvas: HTMLCanvasElement;
  atlasImg: HTMLImageElement;
  scrubber: HTMLInputElement;
  frameLabel: HTMLElement;
  statusLine: HTMLElement;
  progressPanel: HTMLElement;
  toolButtons: NodeListOf<HTMLButtonElement>;
  visibilityToggles: NodeListOf<HTMLInputElement>;
  trainButton: HTMLButtonElement;
  errorBox: HTMLElement;
}

function getElements(): Elements {
  const byId = <T extends HTMLElement>(id: string) =>
    document.getElementById(id) as T;
  return {
    frameCanvas: byId<HTMLCanvasElement>("frame-canvas"),
    atlasImg: byId<HTMLImageElement>("atlas-view"),
    scrubber: byId<HTMLInputElement>("scrubber"),
    frameLabel: byId("frame-label"),
    statusLine: byId("status-line"),
    progressPanel: byId("progress-panel"),
    toolButtons: document.querySelectorAll<HTMLButtonElement>("[data-tool]"),
    visibilityToggles:
      document.querySelectorAll<HTMLInputElement>("[data-kind]"),
    trainButton: byId<HTMLButtonElement>("train-button"),
    errorBox: byId("error-box"),
  };
}

export async function boot(projectId: string, base = ""): Promise<void> {
  const api = new ApiClient(base);
  const el = getElements();
  const status = await api.projectStatus(projectId);
  const session = new EditorSession(api, projectId, status.n_frames);
  await session.sync();

  let cacheKey = 0;
  const redrawFrame = (t: number) => {
    const img = new Image();
    img.onload = () => {
      const ctx = el.frameCanvas.getContext("2d")!;
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(img, 0, 0, el.frameCanvas.width, el.frameCanvas.height);
      const hit = session.trajectoryAt(t);
      if (hit && !hit.out_of_frame) {
        const sx = el.frameCanvas.width / status.width;
        const sy = el.frameCanvas.height / status.height;
        ctx.strokeStyle = "#00ff88";
        ctx.beginPath();
        ctx.arc(hit.x * sx, hit.y * sy, 6, 0, 2 * Math.PI);
        ctx.stroke();
      }
      el.frameLabel.textContent = `frame ${t} / ${status.n_frames - 1}`;
    };
    img.src = api.frameUrl(projectId, t, true, cacheKey);
    el.atlasImg.src = api.atlasUrl(
      projectId,
      session.state.params.layer,
      true,
      256,
      cacheKey,
    );
  };
  const refreshAfterMutation = debounce(() => {
    cacheKey += 1;
    redrawFrame(session.state.frame);
  }, PREVIEW_REFRESH_DEBOUNCE_MS);

  const timeline = new Timeline(status.n_frames, (t) => {
    session.setFrame(t);
    redrawFrame(t);
  });
  el.scrubber.addEventListener("input", () => {
    timeline.scrubTo(Number(el.scrubber.value));
  });
  el.scrubber.addEventListener("change", () => timeline.settle());

  const showError = (e: unknown) => {
    el.errorBox.textContent = e instanceof Error ? e.message : String(e);
  };
  const clearError = () => {
    el.errorBox.textContent = "";
  };

  const gesture = new GestureCapture();
  const canvasPoint = (ev: PointerEvent): Point => {
    const r = el.frameCanvas.getBoundingClientRect();
    return [
      ((ev.clientX - r.left) / r.width) * status.width,
      ((ev.clientY - r.top) / r.height) * status.height,
    ];
  };
  el.frameCanvas.addEventListener("pointerdown", (ev) => {
    if (!session.editable) return;
    el.frameCanvas.setPointerCapture(ev.pointerId);
    gesture.start(...canvasPoint(ev));
  });
  el.frameCanvas.addEventListener("pointermove", (ev) => {
    gesture.move(...canvasPoint(ev));
  });
  el.frameCanvas.addEventListener("pointerup", async (ev) => {
    const chain = gesture.end(...canvasPoint(ev));
    if (!chain) return;
    clearError();
    try {
      if (session.state.tool === "track") {
        const [x, y] = chain[chain.length - 1];
        await session.trackAt(x, y);
        redrawFrame(session.state.frame);
      } else {
        await session.submitStroke(chain);
        refreshAfterMutation();
      }
    } catch (e) {
      showError(e);
    }
  });

  el.toolButtons.forEach((btn) =>
    btn.addEventListener("click", () => {
      session.setTool(btn.dataset.tool as Tool);
      el.toolButtons.forEach((b) =>
        b.classList.toggle("active", b === btn),
      );
    }),
  );
  el.visibilityToggles.forEach((box) =>
    box.addEventListener("change", async () => {
      try {
        await session.toggleVisibility(
          box.dataset.kind as "sketch" | "metadata" | "texture",
        );
        refreshAfterMutation();
      } catch (e) {
        showError(e);
      }
    }),
  );

  el.trainButton.addEventListener("click", async () => {
    clearError();
    try {
      await api.startTraining(projectId, { desk_profile: true });
    } catch (e) {
      showError(e);
    }
  });

  let progress = initialProgress();
  subscribe(api.eventsUrl(projectId), (event) => {
    progress = applyEvent(progress, event);
    el.statusLine.textContent = progress.state;
    if (progress.iteration > 0) {
      const losses = Object.entries(progress.losses)
        .map(([k, v]) => `${k}=${v.toFixed(4)}`)
        .join(" ");
      el.progressPanel.textContent =
        `${progress.phase} iter ${progress.iteration} ` +
        `(${progress.itersPerSec.toFixed(1)} it/s) ${losses}`;
    }
    if (event.type === "state" && event.state === "ready") {
      void session.sync().then(() => redrawFrame(session.state.frame));
    }
    if (event.type === "edits") {
      refreshAfterMutation();
    }
  });

  redrawFrame(0);
}
