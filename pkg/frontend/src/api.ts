// Typed client for the /v1 tuner contract. All segmentation math stays on
// the server; this module only moves JSON.

export interface ImageMeta {
  height: number;
  width: number;
  channels: number;
  seed: number;
  gamma: number;
  gamma_min: number;
  gamma_max: number;
  n_samples: number;
  api_version: string;
}

export interface Region {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface RunLengthLabels {
  dims: [number, number];
  runs: [number, number, number][]; // [start, length, label], background omitted
}

export interface SegmentResponse {
  labels: RunLengthLabels;
  n_communities: number;
  nmi: number | null;
  gamma: number;
  seed: number;
}

export interface CommitResponse {
  job_id: string;
  status: string;
}

export interface JobStatus {
  status: 'running' | 'done' | 'failed';
  gamma: number;
  labels?: RunLengthLabels;
  n_communities?: number;
  error?: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = typeof fetch;

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === 'string') detail = body.detail;
    } catch {
      // keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return resp.json() as Promise<T>;
}

export class TunerApi {
  constructor(
    private base: string = '/v1',
    private fetchImpl: FetchLike = fetch.bind(globalThis)
  ) {}

  getMeta(): Promise<ImageMeta> {
    return this.fetchImpl(`${this.base}/image/meta`).then((r) => parseOrThrow<ImageMeta>(r));
  }

  regionTileUrl(region: Region): string {
    const q = new URLSearchParams({
      x: String(region.x),
      y: String(region.y),
      w: String(region.w),
      h: String(region.h),
    });
    return `${this.base}/region?${q}`;
  }

  segment(region: Region, gamma: number, seed: number): Promise<SegmentResponse> {
    return this.fetchImpl(`${this.base}/segment`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ region, gamma, seed }),
    }).then((r) => parseOrThrow<SegmentResponse>(r));
  }

  commit(gamma: number): Promise<CommitResponse> {
    return this.fetchImpl(`${this.base}/commit`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ gamma }),
    }).then((r) => parseOrThrow<CommitResponse>(r));
  }

  job(id: string): Promise<JobStatus> {
    return this.fetchImpl(`${this.base}/job/${id}`).then((r) => parseOrThrow<JobStatus>(r));
  }
}
