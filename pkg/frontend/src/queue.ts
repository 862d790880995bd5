// Offline-safe submission queue. Each rating has an idempotent key
// (session/pair/criterion); retries after failures converge to the same
// server state as the online path because the server's duplicate rejection
// is treated as an ack.

import { ApiClient, ApiError, RatingBody } from './api';

export interface QueuedRating {
  key: string;
  sessionId: string;
  body: RatingBody;
}

export function ratingKey(sessionId: string, pairId: string, criterion: string): string {
  return `${sessionId}/${pairId}/${criterion}`;
}

export class SubmissionQueue {
  private pending = new Map<string, QueuedRating>();
  private acked = new Set<string>();

  constructor(private client: ApiClient) {}

  get pendingCount(): number {
    return this.pending.size;
  }

  isAcked(key: string): boolean {
    return this.acked.has(key);
  }

  enqueue(sessionId: string, body: RatingBody): void {
    const key = ratingKey(sessionId, body.pair_id, body.criterion);
    if (this.acked.has(key) || this.pending.has(key)) {
      return; // idempotent: duplicates never create extra network calls
    }
    this.pending.set(key, { key, sessionId, body });
  }

  /** Try to deliver everything pending; failures stay queued for the next
   * flush (e.g. on reconnect). Returns the number delivered. */
  async flush(): Promise<number> {
    let delivered = 0;
    for (const item of [...this.pending.values()]) {
      try {
        await this.client.postRating(item.sessionId, item.body);
        this.pending.delete(item.key);
        this.acked.add(item.key);
        delivered += 1;
      } catch (error) {
        if (error instanceof ApiError && /duplicate/i.test(error.message)) {
          // already recorded server-side: a retry of a delivered rating
          this.pending.delete(item.key);
          this.acked.add(item.key);
          delivered += 1;
        }
        // other failures (network, 5xx) stay pending
      }
    }
    return delivered;
  }
}
