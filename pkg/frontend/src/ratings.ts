// Submission flow: four judgments per pair, queued with idempotent keys,
// advance on full delivery, local block on resubmission after ack.

import { RatingBody } from './api';
import { SubmissionQueue, ratingKey } from './queue';
import { CRITERIA, Criterion, Judgment } from './types';
import { ViewerState } from './viewer';

export class RatingController {
  private submittedPairs = new Set<string>();

  constructor(
    private sessionId: string,
    private queue: SubmissionQueue,
  ) {}

  isSubmitted(pairId: string): boolean {
    return this.submittedPairs.has(pairId);
  }

  buildBodies(pairId: string, judgments: Partial<Record<Criterion, Judgment>>): RatingBody[] {
    return CRITERIA.map((criterion) => {
      const judgment = judgments[criterion];
      if (judgment === undefined) {
        throw new Error(`criterion ${criterion} is unanswered`);
      }
      return { pair_id: pairId, criterion, judgment };
    });
  }

  /** Queue all four judgments of the current pair and try to deliver them.
   * Advances the viewer only when every rating is acked; undelivered
   * ratings stay queued and a later flush (reconnect) completes the pair. */
  async submitCurrentPair(state: ViewerState): Promise<boolean> {
    if (state.done) {
      return true;
    }
    const pairId = state.currentPairId;
    if (this.submittedPairs.has(pairId)) {
      return true; // duplicate submit after ack: no additional network calls
    }
    if (!state.allAnswered()) {
      throw new Error('all four criteria must be answered (or marked not assessable)');
    }
    for (const body of this.buildBodies(pairId, state.pending)) {
      this.queue.enqueue(this.sessionId, body);
    }
    await this.queue.flush();
    const complete = this.pairAcked(pairId);
    if (complete) {
      this.submittedPairs.add(pairId);
      state.advancePair();
    }
    return complete;
  }

  private pairAcked(pairId: string): boolean {
    return CRITERIA.every((criterion) =>
      this.queue.isAcked(ratingKey(this.sessionId, pairId, criterion)),
    );
  }

  /** Retry everything still queued (call on reconnect). */
  async retryPending(state: ViewerState): Promise<void> {
    await this.queue.flush();
    const pairId = state.done ? null : state.currentPairId;
    if (
      pairId !== null &&
      !this.submittedPairs.has(pairId) &&
      state.allAnswered() &&
      this.pairAcked(pairId)
    ) {
      this.submittedPairs.add(pairId);
      state.advancePair();
    }
  }
}
