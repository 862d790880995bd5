// DOM wiring: two synchronized panes, criterion strip, keyboard handling,
// lazy slice loading with a +/-3 prefetch window, and a blocking banner on
// schema mismatch. All state lives in the pure modules; this layer only
// reflects it into the page.

import { ApiClient } from './api';
import { SubmissionQueue } from './queue';
import { RatingController } from './ratings';
import { CRITERIA, PairPayload, SchemaMismatchError, SessionView } from './types';
import { ViewerState, handleKey, prefetchIndices, renderPair } from './viewer';

export class ReadApp {
  private state!: ViewerState;
  private session!: SessionView;
  private controller!: RatingController;
  private queue!: SubmissionQueue;
  private cache = new Map<string, PairPayload>();

  constructor(
    private client: ApiClient,
    private root: HTMLElement,
  ) {}

  async start(readerId: string, nPairs = 15, seed = 0): Promise<void> {
    try {
      this.session = await this.client.createSession(readerId, nPairs, seed);
    } catch (error) {
      this.showBanner(String(error));
      throw error;
    }
    this.state = new ViewerState(this.session.pair_ids);
    this.queue = new SubmissionQueue(this.client);
    this.controller = new RatingController(this.session.session_id, this.queue);
    this.buildLayout();
    window.addEventListener('keydown', (event) => this.onKey(event));
    window.addEventListener('online', () => {
      void this.controller.retryPending(this.state).then(() => this.refresh());
    });
    await this.refresh();
  }

  private buildLayout(): void {
    this.root.innerHTML = `
      <div class="banner" hidden></div>
      <div class="panes">
        <figure><img class="pane-left" alt="Left volume"><figcaption>Left</figcaption></figure>
        <figure><img class="pane-right" alt="Right volume"><figcaption>Right</figcaption></figure>
      </div>
      <ul class="criteria">${CRITERIA.map((c) => `<li data-criterion="${c}">${c}</li>`).join('')}</ul>
      <div class="status"></div>
      <button class="submit">Submit pair</button>
      <div class="help">1 left better / 2 equal / 3 right better / 0 not assessable;
        Tab cycles criteria; arrows scroll both panes; Enter submits</div>
    `;
    this.root.querySelector<HTMLButtonElement>('.submit')!.addEventListener('click', () => {
      void this.submit();
    });
  }

  private showBanner(message: string): void {
    const banner = this.root.querySelector<HTMLElement>('.banner');
    if (banner) {
      banner.hidden = false;
      banner.textContent = message;
    } else {
      this.root.textContent = message;
    }
  }

  private async load(pairId: string, sliceIndex: number): Promise<PairPayload> {
    const key = `${pairId}:${sliceIndex}`;
    const cached = this.cache.get(key);
    if (cached) {
      return cached;
    }
    const payload = await this.client.getPair(this.session.session_id, pairId, sliceIndex);
    this.cache.set(key, payload);
    return payload;
  }

  private prefetch(pairId: string, current: number, nSlices: number): void {
    for (const index of prefetchIndices(current, nSlices)) {
      void this.load(pairId, index).catch(() => undefined);
    }
  }

  async refresh(): Promise<void> {
    if (this.state.done) {
      await this.showCompletion();
      return;
    }
    let payload: PairPayload;
    try {
      payload = await this.load(this.state.currentPairId, this.state.sliceIndex);
    } catch (error) {
      if (error instanceof SchemaMismatchError) {
        this.showBanner(error.message);
        return;
      }
      this.showBanner(`offline: ${String(error)} (ratings will be queued)`);
      return;
    }
    this.state.setSliceCount(payload.n_slices);
    const model = renderPair(payload);
    this.root.querySelector<HTMLImageElement>('.pane-left')!.src = model.left.src;
    this.root.querySelector<HTMLImageElement>('.pane-right')!.src = model.right.src;
    for (const item of this.root.querySelectorAll<HTMLElement>('.criteria li')) {
      const criterion = item.dataset.criterion!;
      item.classList.toggle('active', criterion === this.state.activeCriterion);
      const judgment = this.state.pending[criterion as (typeof CRITERIA)[number]];
      item.dataset.judgment = judgment ?? '';
    }
    const status = this.root.querySelector<HTMLElement>('.status')!;
    status.textContent =
      `pair ${this.state.pairIndex + 1}/${this.state.pairIds.length}, ` +
      `slice ${model.sliceIndex + 1}/${model.nSlices}, queued ${this.queue.pendingCount}`;
    this.prefetch(this.state.currentPairId, this.state.sliceIndex, payload.n_slices);
  }

  private onKey(event: KeyboardEvent): void {
    if (event.key === 'Enter') {
      void this.submit();
      return;
    }
    const action = handleKey(this.state, event.key);
    if (action !== null) {
      event.preventDefault();
      void this.refresh();
    }
  }

  async submit(): Promise<void> {
    try {
      await this.controller.submitCurrentPair(this.state);
    } catch (error) {
      this.showBanner(String(error));
      return;
    }
    await this.refresh();
  }

  private async showCompletion(): Promise<void> {
    const view = await this.client.getSession(this.session.session_id);
    const [done, total] = view.progress;
    this.root.innerHTML = `
      <h2>Session complete</h2>
      <p>${done}/${total} ratings recorded. Thank you.</p>
    `;
  }
}
