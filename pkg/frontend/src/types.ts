// Versioned payload schemas of the rating service. The UI consumes only
// these shapes; nothing here carries volume origin or model identity.

export const SCHEMA_VERSION = 1;

export const CRITERIA = [
  'image_detail',
  'image_noise',
  'fll_detectability',
  'diagnostic_confidence',
] as const;

export type Criterion = (typeof CRITERIA)[number];

export type Judgment = 'left_better' | 'equal' | 'right_better' | 'not_assessable';

export interface SessionView {
  schema_version: number;
  session_id: string;
  reader_id: string;
  status: 'open' | 'complete';
  created_at: string;
  pair_ids: string[];
  criteria: string[];
  progress: [number, number];
}

export interface PairPayload {
  schema_version: number;
  pair_id: string;
  slice_index: number;
  n_slices: number;
  left_image: string; // base64 PNG
  right_image: string;
  left_window: [number, number];
  right_window: [number, number];
  height: number;
  width: number;
}

export interface RatingAck {
  schema_version: number;
  recorded: boolean;
  complete: boolean;
}

export class SchemaMismatchError extends Error {
  constructor(got: unknown) {
    super(`unsupported payload schema_version ${String(got)}; expected ${SCHEMA_VERSION}`);
    this.name = 'SchemaMismatchError';
  }
}

export function assertSchema(payload: { schema_version?: unknown }): void {
  if (payload.schema_version !== SCHEMA_VERSION) {
    throw new SchemaMismatchError(payload.schema_version);
  }
}
