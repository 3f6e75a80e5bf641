/** Trailing-edge debounce used to bound server render load after edits. */

export const PREVIEW_REFRESH_DEBOUNCE_MS = 200;

export interface Debounced<A extends unknown[]> {
  (...args: A): void;
  cancel(): void;
  flush(): void;
}

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
  setTimer: typeof setTimeout = setTimeout,
  clearTimer: typeof clearTimeout = clearTimeout,
): Debounced<A> {
  let handle: ReturnType<typeof setTimeout> | null = null;
  let pending: A | null = null;

  const wrapped = (...args: A): void => {
    pending = args;
    if (handle !== null) clearTimer(handle);
    handle = setTimer(() => {
      handle = null;
      const args2 = pending!;
      pending = null;
      fn(...args2);
    }, waitMs);
  };
  wrapped.cancel = () => {
    if (handle !== null) clearTimer(handle);
    handle = null;
    pending = null;
  };
  wrapped.flush = () => {
    if (handle === null) return;
    clearTimer(handle);
    handle = null;
    const args = pending!;
    pending = null;
    fn(...args);
  };
  return wrapped;
}
