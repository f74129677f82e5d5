import { describe, expect, it } from 'vitest';

import type { ImageMeta, RunLengthLabels } from '../src/api.js';
import { initialSession, reduce, replay } from '../src/state.js';
import type { TunerEvent } from '../src/state.js';

const meta: ImageMeta = {
  height: 64,
  width: 64,
  channels: 1,
  seed: 3,
  gamma: 0.01,
  gamma_min: 0.005,
  gamma_max: 0.05,
  n_samples: 4,
  api_version: 'v1',
};

const labels: RunLengthLabels = { dims: [2, 2], runs: [[0, 2, 1]] };

function segmentPair(token: number, gamma = 0.01): TunerEvent[] {
  return [
    { kind: 'segment-requested', token },
    {
      kind: 'segment-received',
      token,
      region: { x: 0, y: 0, w: 64, h: 64 },
      gamma,
      labels,
      communityCount: 2,
      nmi: 0.9,
    },
  ];
}

describe('reducer', () => {
  it('defaults to the full-image region and server gamma on meta load', () => {
    const s = reduce(initialSession(), { kind: 'meta-loaded', meta });
    expect(s.region).toEqual({ x: 0, y: 0, w: 64, h: 64 });
    expect(s.gamma).toBe(0.01);
  });

  it('clamps gamma to the configured grid bounds', () => {
    let s = reduce(initialSession(), { kind: 'meta-loaded', meta });
    s = reduce(s, { kind: 'gamma-changed', gamma: 10 });
    expect(s.gamma).toBe(meta.gamma_max);
    s = reduce(s, { kind: 'gamma-changed', gamma: 1e-9 });
    expect(s.gamma).toBe(meta.gamma_min);
  });

  it('appends to history on every accepted segmentation', () => {
    const events: TunerEvent[] = [
      { kind: 'meta-loaded', meta },
      ...segmentPair(1, 0.01),
      ...segmentPair(2, 0.02),
    ];
    const s = replay(events);
    expect(s.history.map((h) => h.gamma)).toEqual([0.01, 0.02]);
  });

  it('discards stale segment responses by token', () => {
    let s = replay([{ kind: 'meta-loaded', meta }, { kind: 'segment-requested', token: 1 }]);
    s = reduce(s, { kind: 'segment-requested', token: 2 });
    const stale = segmentPair(1)[1];
    s = reduce(s, stale);
    expect(s.overlay).toBeNull();
    expect(s.history).toHaveLength(0);
    const fresh = segmentPair(2)[1];
    s = reduce(s, fresh);
    expect(s.overlay).toEqual(labels);
  });

  it('replaying the event log reproduces the exact view state', () => {
    const events: TunerEvent[] = [
      { kind: 'meta-loaded', meta },
      { kind: 'region-selected', region: { x: 4, y: 4, w: 16, h: 16 } },
      { kind: 'gamma-changed', gamma: 0.02 },
      ...segmentPair(1, 0.02),
      { kind: 'commit-started', job: { id: 'j', status: 'running', gamma: 0.02, labels: null } },
      { kind: 'job-updated', job: { id: 'j', status: 'done', gamma: 0.02, labels } },
    ];
    expect(replay(events)).toEqual(replay(events));
    const s = replay(events);
    expect(s.job?.status).toBe('done');
    expect(s.history).toHaveLength(1);
  });

  it('surfaces commit conflicts without touching other state', () => {
    const before = replay([{ kind: 'meta-loaded', meta }, ...segmentPair(1)]);
    const after = reduce(before, { kind: 'commit-rejected', message: 'job in progress' });
    expect(after.error).toBe('job in progress');
    expect(after.history).toEqual(before.history);
    expect(after.overlay).toEqual(before.overlay);
  });

  it('ignores job updates for a different job id', () => {
    let s = replay([
      { kind: 'meta-loaded', meta },
      { kind: 'commit-started', job: { id: 'a', status: 'running', gamma: 0.01, labels: null } },
    ]);
    s = reduce(s, { kind: 'job-updated', job: { id: 'b', status: 'done', gamma: 0.01, labels } });
    expect(s.job?.id).toBe('a');
    expect(s.job?.status).toBe('running');
  });
});
