// Viewer state: one slice index drives both panes, so synchronized scrolling
// holds by construction. The render model is pure and DOM-free.

import { CRITERIA, Criterion, Judgment, PairPayload } from './types';

export interface PaneModel {
  label: 'Left' | 'Right';
  src: string; // data URL
  window: [number, number];
}

export interface RenderModel {
  left: PaneModel;
  right: PaneModel;
  sliceIndex: number;
  nSlices: number;
}

export function renderPair(payload: PairPayload): RenderModel {
  // both panes come from one payload and one slice index; labels are neutral
  return {
    left: {
      label: 'Left',
      src: `data:image/png;base64,${payload.left_image}`,
      window: payload.left_window,
    },
    right: {
      label: 'Right',
      src: `data:image/png;base64,${payload.right_image}`,
      window: payload.right_window,
    },
    sliceIndex: payload.slice_index,
    nSlices: payload.n_slices,
  };
}

export class ViewerState {
  pairIndex = 0;
  sliceIndex = 0;
  nSlices = 1;
  activeCriterion: Criterion = CRITERIA[0];
  pending: Partial<Record<Criterion, Judgment>> = {};

  constructor(public readonly pairIds: string[]) {
    if (pairIds.length === 0) {
      throw new Error('a session needs at least one pair');
    }
  }

  get currentPairId(): string {
    return this.pairIds[this.pairIndex];
  }

  get done(): boolean {
    return this.pairIndex >= this.pairIds.length;
  }

  setSliceCount(n: number): void {
    this.nSlices = Math.max(1, n);
    this.setSlice(this.sliceIndex);
  }

  setSlice(index: number): void {
    // clamped at volume ends; a single index feeds both panes
    this.sliceIndex = Math.min(Math.max(index, 0), this.nSlices - 1);
  }

  scrollBy(delta: number): void {
    this.setSlice(this.sliceIndex + delta);
  }

  judge(judgment: Judgment): void {
    this.pending[this.activeCriterion] = judgment;
  }

  cycleCriterion(): Criterion {
    const index = CRITERIA.indexOf(this.activeCriterion);
    this.activeCriterion = CRITERIA[(index + 1) % CRITERIA.length];
    return this.activeCriterion;
  }

  allAnswered(): boolean {
    return CRITERIA.every((criterion) => this.pending[criterion] !== undefined);
  }

  advancePair(): void {
    this.pairIndex += 1;
    this.sliceIndex = 0;
    this.pending = {};
    this.activeCriterion = CRITERIA[0];
  }
}

// keyboard-first interaction: 1/2/3 judge the active criterion, 0 marks it
// not assessable, Tab cycles criteria, arrows scroll both panes
export function handleKey(state: ViewerState, key: string): 'judged' | 'scrolled' | 'cycled' | null {
  switch (key) {
    case '1':
      state.judge('left_better');
      return 'judged';
    case '2':
      state.judge('equal');
      return 'judged';
    case '3':
      state.judge('right_better');
      return 'judged';
    case '0':
      state.judge('not_assessable');
      return 'judged';
    case 'Tab':
      state.cycleCriterion();
      return 'cycled';
    case 'ArrowUp':
      state.scrollBy(1);
      return 'scrolled';
    case 'ArrowDown':
      state.scrollBy(-1);
      return 'scrolled';
    default:
      return null;
  }
}

export function prefetchIndices(current: number, nSlices: number, radius = 3): number[] {
  const out: number[] = [];
  for (let offset = -radius; offset <= radius; offset += 1) {
    const index = current + offset;
    if (index >= 0 && index < nSlices && index !== current) {
      out.push(index);
    }
  }
  return out;
}
