/**
 * Seeded UMAP reduction of news vectors from 768 to 128 dims.
 *
 * The projection is fit on candidate-period vectors only (timestamps up to
 * the supplied cutoff) and applied to everything, so evaluation-period news
 * never influences the manifold. The UMAP random source is a seeded PRNG,
 * making the output file byte-identical across reruns.
 */

import { UMAP } from "umap-js";
import { EmbeddingStore, addEntry, createStore, sortedTimestamps } from "./format.js";
import { Rng } from "./rng.js";

export interface ReduceOptions {
  seed: number;
  nNeighbors: number;
  minDist: number;
  candidateEndMs?: number;
}

export const DEFAULT_REDUCE: ReduceOptions = { seed: 7, nNeighbors: 15, minDist: 0.1 };

export function reduceNews(store: EmbeddingStore, options: ReduceOptions = DEFAULT_REDUCE): EmbeddingStore {
  if (store.kind !== "news_raw") {
    throw new Error(`reduce expects a news_raw store, got ${store.kind}`);
  }
  const timestamps = sortedTimestamps(store);
  const cutoff = options.candidateEndMs ?? Number.POSITIVE_INFINITY;
  const fitTimestamps = timestamps.filter((t) => t <= cutoff);
  const restTimestamps = timestamps.filter((t) => t > cutoff);
  const outDim = 128;
  if (fitTimestamps.length <= options.nNeighbors) {
    throw new Error(
      `need more than ${options.nNeighbors} candidate-period vectors to fit, ` +
        `have ${fitTimestamps.length}`,
    );
  }

  const rng = new Rng(options.seed);
  const umap = new UMAP({
    nComponents: outDim,
    nNeighbors: options.nNeighbors,
    minDist: options.minDist,
    random: () => rng.next(),
  });
  const fitData = fitTimestamps.map((t) => Array.from(store.entries.get(t)!));
  const fitted = umap.fit(fitData);

  const reduced = createStore("news_reduced");
  fitTimestamps.forEach((t, i) => addEntry(reduced, t, fitted[i]));
  if (restTimestamps.length > 0) {
    const restData = restTimestamps.map((t) => Array.from(store.entries.get(t)!));
    const transformed = umap.transform(restData);
    restTimestamps.forEach((t, i) => addEntry(reduced, t, transformed[i]));
  }
  return reduced;
}
