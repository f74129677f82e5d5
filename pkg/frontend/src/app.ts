// DOM wiring: pan/drag region selection, gamma slider with live overlay,
// commit + job polling. All view updates flow through the reducer so the
// on-screen state is a pure function of the event log.

import { ApiError, TunerApi } from './api.js';
import type { JobStatus, Region } from './api.js';
import { renderOverlayRgba } from './overlay.js';
import { clampRegion } from './region.js';
import { debounce, gammaToSlider, sliderToGamma } from './slider.js';
import { initialSession, reduce } from './state.js';
import type { TunerEvent, TunerSession } from './state.js';

const JOB_KEY = 'segstitch.activeJob';
const POLL_MS = 500;

export class TunerApp {
  private session: TunerSession = initialSession();
  private tokenCounter = 0;
  private api: TunerApi;

  constructor(private root: Document, api?: TunerApi) {
    this.api = api ?? new TunerApi();
  }

  private dispatch(event: TunerEvent): void {
    this.session = reduce(this.session, event);
    this.render();
  }

  async start(): Promise<void> {
    const meta = await this.api.getMeta();
    this.dispatch({ kind: 'meta-loaded', meta });
    this.bindControls();
    await this.loadTile();
    this.requestSegment();
    const pending = sessionStorage.getItem(JOB_KEY);
    if (pending) this.pollJob(pending); // resume after reload mid-job
  }

  private el<T extends HTMLElement>(id: string): T {
    const node = this.root.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  private bindControls(): void {
    const slider = this.el<HTMLInputElement>('gamma-slider');
    const debouncedSegment = debounce(() => this.requestSegment());
    slider.addEventListener('input', () => {
      const meta = this.session.meta;
      if (!meta) return;
      const gamma = sliderToGamma(Number(slider.value), meta.gamma_min, meta.gamma_max);
      this.dispatch({ kind: 'gamma-changed', gamma });
      debouncedSegment();
    });
    this.el<HTMLButtonElement>('commit-button').addEventListener('click', () => {
      void this.commit();
    });

    const canvas = this.el<HTMLCanvasElement>('image-canvas');
    let dragStart: { x: number; y: number } | null = null;
    canvas.addEventListener('pointerdown', (ev) => {
      dragStart = this.canvasPoint(canvas, ev);
    });
    canvas.addEventListener('pointerup', (ev) => {
      if (!dragStart || !this.session.meta) return;
      const end = this.canvasPoint(canvas, ev);
      const region = clampRegion(
        { x0: dragStart.x, y0: dragStart.y, x1: end.x, y1: end.y },
        this.session.meta.width,
        this.session.meta.height
      );
      dragStart = null;
      if (region === null) return; // zero-area drag ignored
      this.dispatch({ kind: 'region-selected', region });
      void this.loadTile().then(() => this.requestSegment());
    });
  }

  private canvasPoint(canvas: HTMLCanvasElement, ev: PointerEvent): { x: number; y: number } {
    const rect = canvas.getBoundingClientRect();
    const region = this.session.region;
    if (!region) return { x: 0, y: 0 };
    // map viewport position into image coordinates of the visible region
    const sx = region.w / rect.width;
    const sy = region.h / rect.height;
    return {
      x: region.x + (ev.clientX - rect.left) * sx,
      y: region.y + (ev.clientY - rect.top) * sy,
    };
  }

  private async loadTile(): Promise<void> {
    const region = this.session.region;
    if (!region) return;
    const canvas = this.el<HTMLCanvasElement>('image-canvas');
    const img = new Image();
    img.src = this.api.regionTileUrl(region);
    await img.decode();
    canvas.width = region.w;
    canvas.height = region.h;
    canvas.getContext('2d')!.drawImage(img, 0, 0);
  }

  private requestSegment(): void {
    const { region, meta } = this.session;
    if (!region || !meta) return;
    const token = ++this.tokenCounter;
    const gamma = this.session.gamma;
    this.dispatch({ kind: 'segment-requested', token });
    this.api
      .segment(region, gamma, meta.seed)
      .then((resp) => {
        this.dispatch({
          kind: 'segment-received',
          token,
          region,
          gamma: resp.gamma,
          labels: resp.labels,
          communityCount: resp.n_communities,
          nmi: resp.nmi,
        });
      })
      .catch((err: unknown) => {
        const message = err instanceof ApiError ? err.message : String(err);
        this.dispatch({ kind: 'segment-failed', token, message });
      });
  }

  private async commit(): Promise<void> {
    try {
      const resp = await this.api.commit(this.session.gamma);
      sessionStorage.setItem(JOB_KEY, resp.job_id);
      this.dispatch({
        kind: 'commit-started',
        job: { id: resp.job_id, status: 'running', gamma: this.session.gamma, labels: null },
      });
      this.pollJob(resp.job_id);
    } catch (err) {
      const message =
        err instanceof ApiError && err.status === 409 ? 'job in progress' : String(err);
      this.dispatch({ kind: 'commit-rejected', message });
    }
  }

  private pollJob(jobId: string): void {
    const tick = async () => {
      let status: JobStatus;
      try {
        status = await this.api.job(jobId);
      } catch {
        sessionStorage.removeItem(JOB_KEY);
        return;
      }
      this.dispatch({
        kind: 'job-updated',
        job: {
          id: jobId,
          status: status.status,
          gamma: status.gamma,
          labels: status.labels ?? null,
        },
      });
      if (status.status === 'running') {
        setTimeout(tick, POLL_MS);
      } else {
        sessionStorage.removeItem(JOB_KEY);
      }
    };
    void tick();
  }

  private render(): void {
    const s = this.session;
    const meta = s.meta;
    if (meta) {
      const slider = this.el<HTMLInputElement>('gamma-slider');
      slider.value = String(gammaToSlider(s.gamma, meta.gamma_min, meta.gamma_max));
      this.el('gamma-value').textContent = s.gamma.toPrecision(3);
    }
    this.el('status-line').textContent = s.error
      ? `error: ${s.error}`
      : s.communityCount !== null
        ? `${s.communityCount} communities` +
          (s.nmi !== null ? `, sample agreement ${s.nmi?.toFixed(3)}` : '')
        : 'segmenting…';
    if (s.region) {
      this.el('region-line').textContent =
        `region ${s.region.x},${s.region.y} ${s.region.w}x${s.region.h}`;
    }
    const overlayCanvas = this.el<HTMLCanvasElement>('overlay-canvas');
    if (s.overlay && s.region) {
      const [h, w] = s.overlay.dims;
      overlayCanvas.width = w;
      overlayCanvas.height = h;
      const ctx = overlayCanvas.getContext('2d')!;
      ctx.putImageData(new ImageData(renderOverlayRgba(s.overlay), w, h), 0, 0);
    } else {
      overlayCanvas.getContext('2d')?.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
    }
    const jobLine = this.el('job-line');
    if (s.job) {
      jobLine.textContent =
        s.job.status === 'running'
          ? `full-image job running (gamma ${s.job.gamma})`
          : s.job.status === 'done'
            ? `full-image segmentation done (gamma ${s.job.gamma})`
            : 'job failed';
      if (s.job.status === 'done' && s.job.labels && (!s.region || isFullRegion(s))) {
        const [h, w] = s.job.labels.dims;
        overlayCanvas.width = w;
        overlayCanvas.height = h;
        overlayCanvas
          .getContext('2d')!
          .putImageData(new ImageData(renderOverlayRgba(s.job.labels), w, h), 0, 0);
      }
    } else {
      jobLine.textContent = '';
    }
    const history = this.el('history-list');
    history.innerHTML = '';
    for (const entry of s.history.slice(-12)) {
      const li = this.root.createElement('li');
      li.textContent =
        `gamma ${entry.gamma.toPrecision(3)} -> ${entry.communityCount} communities` +
        (entry.nmi !== null ? ` (NMI ${entry.nmi.toFixed(3)})` : '');
      history.appendChild(li);
    }
  }
}

function isFullRegion(s: TunerSession): boolean {
  return Boolean(
    s.meta &&
      s.region &&
      s.region.x === 0 &&
      s.region.y === 0 &&
      s.region.w === s.meta.width &&
      s.region.h === s.meta.height
  );
}

if (typeof document !== 'undefined' && document.getElementById('image-canvas')) {
  void new TunerApp(document).start();
}
