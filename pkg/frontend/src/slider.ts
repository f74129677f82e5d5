// Log-scale slider mapping (resolution effects are multiplicative) and the
// debounce guard for slider-driven requests.

export function sliderToGamma(t: number, gammaMin: number, gammaMax: number): number {
  const clamped = Math.min(1, Math.max(0, t));
  return gammaMin * Math.pow(gammaMax / gammaMin, clamped);
}

export function gammaToSlider(gamma: number, gammaMin: number, gammaMax: number): number {
  if (gamma <= gammaMin) return 0;
  if (gamma >= gammaMax) return 1;
  return Math.log(gamma / gammaMin) / Math.log(gammaMax / gammaMin);
}

export const SEGMENT_DEBOUNCE_MS = 250;

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number = SEGMENT_DEBOUNCE_MS,
  timers: { set: typeof setTimeout; clear: typeof clearTimeout } = {
    set: setTimeout.bind(globalThis),
    clear: clearTimeout.bind(globalThis),
  }
): (...args: A) => void {
  let handle: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (handle !== null) timers.clear(handle);
    handle = timers.set(() => {
      handle = null;
      fn(...args);
    }, waitMs);
  };
}
