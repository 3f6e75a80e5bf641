/** Server-sent-events consumption: training progress and edit invalidation. */

import { ServerEvent } from "./api.js";

export interface TrainingProgress {
  phase: string;
  iteration: number;
  itersPerSec: number;
  losses: Record<string, number>;
  state: string;
  error: string | null;
  lastEventAt: number;
}

export function initialProgress(): TrainingProgress {
  return {
    phase: "",
    iteration: 0,
    itersPerSec: 0,
    losses: {},
    state: "unknown",
    error: null,
    lastEventAt: 0,
  };
}

export function parseEventData(data: string): ServerEvent | null {
  try {
    const obj = JSON.parse(data);
    return typeof obj === "object" && obj !== null && "type" in obj
      ? (obj as ServerEvent)
      : null;
  } catch {
    return null;
  }
}

/** Folds one server event into the progress panel state. */
export function applyEvent(
  progress: TrainingProgress,
  event: ServerEvent,
  now: number = Date.now(),
): TrainingProgress {
  const next = { ...progress, lastEventAt: now };
  switch (event.type) {
    case "state":
      next.state = event.state;
      next.error = event.error ?? null;
      return next;
    case "progress":
      next.phase = event.phase;
      next.iteration = event.iteration;
      next.itersPerSec = event.iters_per_sec;
      next.losses = event.losses;
      if (next.state === "unknown") next.state = event.phase;
      return next;
    default:
      return next;
  }
}

export interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

/**
 * Subscribes to the project event stream, invoking `onEvent` per parsed
 * event. Returns an unsubscribe function. The stream is independent of
 * request/response traffic: no mutation ever waits on it.
 */
export function subscribe(
  url: string,
  onEvent: (event: ServerEvent) => void,
  makeSource: EventSourceFactory = (u) =>
    new EventSource(u) as unknown as EventSourceLike,
): () => void {
  const source = makeSource(url);
  source.onmessage = (ev) => {
    const parsed = parseEventData(ev.data);
    if (parsed) onEvent(parsed);
  };
  return () => source.close();
}
