// Thin typed client over the versioned JSON endpoints. The fetch function is
// injectable so tests can record or fail requests deterministically.

import {
  PairPayload,
  RatingAck,
  SessionView,
  assertSchema,
  Criterion,
  Judgment,
} from './types';

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export interface RatingBody {
  pair_id: string;
  criterion: Criterion;
  judgment: Judgment;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchFn = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, String(body?.detail ?? 'request failed'));
    }
    return body as T;
  }

  async createSession(readerId: string, nPairs = 15, seed = 0): Promise<SessionView> {
    const view = await this.request<SessionView>('/v1/sessions', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ reader_id: readerId, n_pairs: nPairs, seed }),
    });
    assertSchema(view);
    return view;
  }

  async getSession(sessionId: string): Promise<SessionView> {
    const view = await this.request<SessionView>(`/v1/sessions/${sessionId}`);
    assertSchema(view);
    return view;
  }

  async getPair(sessionId: string, pairId: string, sliceIndex: number): Promise<PairPayload> {
    const payload = await this.request<PairPayload>(
      `/v1/sessions/${sessionId}/pairs/${pairId}?slice_index=${sliceIndex}`,
    );
    assertSchema(payload);
    return payload;
  }

  async postRating(sessionId: string, body: RatingBody): Promise<RatingAck> {
    const ack = await this.request<RatingAck>(`/v1/sessions/${sessionId}/ratings`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    assertSchema(ack);
    return ack;
  }
}
