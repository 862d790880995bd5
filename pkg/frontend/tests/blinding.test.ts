import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { SubmissionQueue } from '../src/queue';
import { RatingController } from '../src/ratings';
import { CRITERIA, SCHEMA_VERSION, SchemaMismatchError } from '../src/types';
import { ViewerState, renderPair } from '../src/viewer';
import { FakeServer } from './fakeserver';

const ORIGIN_MARKERS = ['left_source', 'model_id', 'patient_id', 'cohort', 'origin', 'synthetic', 'real'];

describe('blinding', () => {
  it('no request ever includes or asks for origin metadata', async () => {
    const server = new FakeServer();
    const client = new ApiClient('', server.fetchFn);
    const view = await client.createSession('r1', 2, 5);
    const state = new ViewerState(view.pair_ids);
    const queue = new SubmissionQueue(client);
    const controller = new RatingController(view.session_id, queue);

    await client.getPair(view.session_id, view.pair_ids[0], 0);
    await client.getPair(view.session_id, view.pair_ids[0], 1);
    while (!state.done) {
      CRITERIA.forEach((criterion) => {
        state.activeCriterion = criterion;
        state.judge('equal');
      });
      await controller.submitCurrentPair(state);
    }
    await client.getSession(view.session_id);

    expect(server.requests.length).toBeGreaterThan(0);
    for (const request of server.requests) {
      for (const marker of ORIGIN_MARKERS) {
        expect(request.url).not.toContain(marker);
        if (request.body !== null) {
          const keys = Object.keys(JSON.parse(request.body));
          expect(keys).not.toContain(marker);
        }
      }
    }
  });

  it('renders with neutral Left/Right labels only', () => {
    const model = renderPair({
      schema_version: SCHEMA_VERSION,
      pair_id: 'p',
      slice_index: 0,
      n_slices: 3,
      left_image: 'QQ==',
      right_image: 'Qg==',
      left_window: [0, 1],
      right_window: [0, 1],
      height: 4,
      width: 4,
    });
    expect([model.left.label, model.right.label]).toEqual(['Left', 'Right']);
    const rendered = JSON.stringify(model);
    for (const marker of ['model', 'source', 'patient', 'cohort']) {
      expect(rendered).not.toContain(marker);
    }
  });

  it('rejects unsupported payload schema versions as a blocking error', async () => {
    const client = new ApiClient('', async () =>
      new Response(
        JSON.stringify({ schema_version: 999, session_id: 'x', pair_ids: [] }),
        { status: 200, headers: { 'content-type': 'application/json' } },
      ),
    );
    await expect(client.createSession('r')).rejects.toBeInstanceOf(SchemaMismatchError);
  });
});
