import { describe, expect, it, vi } from 'vitest';

import { ApiError, TunerApi } from '../src/api.js';

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

describe('TunerApi', () => {
  it('posts the segment request body the server expects', async () => {
    const calls: Array<{ url: string; init?: RequestInit }> = [];
    const fetchMock = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      calls.push({ url: String(url), init });
      return jsonResponse({
        labels: { dims: [1, 1], runs: [] },
        n_communities: 0,
        nmi: null,
        gamma: 0.01,
        seed: 7,
      });
    });
    const api = new TunerApi('/v1', fetchMock as unknown as typeof fetch);
    await api.segment({ x: 1, y: 2, w: 3, h: 4 }, 0.01, 7);
    expect(calls[0].url).toBe('/v1/segment');
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      region: { x: 1, y: 2, w: 3, h: 4 },
      gamma: 0.01,
      seed: 7,
    });
  });

  it('surfaces the server detail message on 400', async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ detail: 'region outside image' }, 400));
    const api = new TunerApi('/v1', fetchMock as unknown as typeof fetch);
    await expect(api.segment({ x: 0, y: 0, w: 9, h: 9 }, 0.01, 0)).rejects.toMatchObject({
      status: 400,
      message: 'region outside image',
    });
  });

  it('maps commit conflicts to ApiError 409', async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ detail: 'a job is already running' }, 409));
    const api = new TunerApi('/v1', fetchMock as unknown as typeof fetch);
    try {
      await api.commit(0.5);
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(409);
    }
  });

  it('builds region tile urls with query params', () => {
    const api = new TunerApi('/v1');
    expect(api.regionTileUrl({ x: 8, y: 4, w: 16, h: 12 })).toBe('/v1/region?x=8&y=4&w=16&h=12');
  });
});
