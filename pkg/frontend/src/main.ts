import { ApiClient } from './api';
import { ReadApp } from './app';

const params = new URLSearchParams(window.location.search);
const base = params.get('api') ?? '';
const readerId = params.get('reader') ?? 'reader';
const seed = Number(params.get('seed') ?? '0');
const nPairs = Number(params.get('pairs') ?? '15');

const root = document.getElementById('app');
if (!root) {
  throw new Error('missing #app container');
}
const app = new ReadApp(new ApiClient(base), root);
void app.start(readerId, nPairs, seed);
