// Session state as a pure reducer over (server responses, user events).
// Replaying the event log reproduces the view exactly, which is what the
// state tests assert.

import type { ImageMeta, Region, RunLengthLabels } from './api.js';

export interface HistoryEntry {
  region: Region;
  gamma: number;
  communityCount: number;
  nmi: number | null;
}

export interface JobView {
  id: string;
  status: 'running' | 'done' | 'failed';
  gamma: number;
  labels: RunLengthLabels | null;
}

export interface TunerSession {
  meta: ImageMeta | null;
  region: Region | null;
  gamma: number;
  overlay: RunLengthLabels | null;
  communityCount: number | null;
  nmi: number | null;
  history: HistoryEntry[]; // append-only
  inFlightToken: number | null;
  error: string | null;
  job: JobView | null;
}

export type TunerEvent =
  | { kind: 'meta-loaded'; meta: ImageMeta }
  | { kind: 'region-selected'; region: Region }
  | { kind: 'gamma-changed'; gamma: number }
  | { kind: 'segment-requested'; token: number }
  | {
      kind: 'segment-received';
      token: number;
      region: Region;
      gamma: number;
      labels: RunLengthLabels;
      communityCount: number;
      nmi: number | null;
    }
  | { kind: 'segment-failed'; token: number; message: string }
  | { kind: 'commit-started'; job: JobView }
  | { kind: 'commit-rejected'; message: string }
  | { kind: 'job-updated'; job: JobView };

export function initialSession(): TunerSession {
  return {
    meta: null,
    region: null,
    gamma: NaN,
    overlay: null,
    communityCount: null,
    nmi: null,
    history: [],
    inFlightToken: null,
    error: null,
    job: null,
  };
}

export function clampGamma(gamma: number, meta: ImageMeta | null): number {
  if (meta === null) return gamma;
  return Math.min(meta.gamma_max, Math.max(meta.gamma_min, gamma));
}

export function reduce(state: TunerSession, event: TunerEvent): TunerSession {
  switch (event.kind) {
    case 'meta-loaded': {
      const meta = event.meta;
      return {
        ...state,
        meta,
        gamma: clampGamma(Number.isFinite(state.gamma) ? state.gamma : meta.gamma, meta),
        region: state.region ?? { x: 0, y: 0, w: meta.width, h: meta.height },
      };
    }
    case 'region-selected':
      return { ...state, region: event.region, overlay: null, error: null };
    case 'gamma-changed':
      return { ...state, gamma: clampGamma(event.gamma, state.meta) };
    case 'segment-requested':
      return { ...state, inFlightToken: event.token, error: null };
    case 'segment-received': {
      if (event.token !== state.inFlightToken) return state; // stale response
      return {
        ...state,
        inFlightToken: null,
        overlay: event.labels,
        communityCount: event.communityCount,
        nmi: event.nmi,
        history: [
          ...state.history,
          {
            region: event.region,
            gamma: event.gamma,
            communityCount: event.communityCount,
            nmi: event.nmi,
          },
        ],
      };
    }
    case 'segment-failed':
      if (event.token !== state.inFlightToken) return state;
      return { ...state, inFlightToken: null, error: event.message };
    case 'commit-started':
      return { ...state, job: event.job, error: null };
    case 'commit-rejected':
      return { ...state, error: event.message };
    case 'job-updated':
      if (state.job !== null && state.job.id !== event.job.id) return state;
      return { ...state, job: event.job };
  }
}

export function replay(events: TunerEvent[]): TunerSession {
  return events.reduce(reduce, initialSession());
}
