/**
 * News text -> 768-dim vectors.
 *
 * The intended encoder is a pretrained crypto language model's [CLS]
 * output. No such model ships with this toolkit, so two paths exist:
 *
 * - "hashing": a deterministic bag-of-hashed-tokens embedder (each token
 *   hashes to a seeded gaussian direction, weighted by log count, vector
 *   L2-normalized). Offline, reproducible, format-conformant; a stand-in
 *   for experiments without the language model.
 * - any other model id: raises an environment error telling the caller to
 *   produce vectors externally and import them via the store format.
 */

import { readFileSync } from "node:fs";
import Papa from "papaparse";
import { EmbeddingStore, addEntry, createStore } from "./format.js";
import { Rng, fnv1a } from "./rng.js";

export const NEWS_DIM = 768;
export const HASHING_MODEL = "hashing";

export class EnvironmentError extends Error {}

export interface NewsItem {
  timestamp: number;
  text: string;
}

export function readNewsCsv(path: string): NewsItem[] {
  const text = readFileSync(path, "utf-8");
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new Error(`news csv parse error at row ${first.row}: ${first.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  if (fields[0] !== "timestamp_ms" || fields[1] !== "text") {
    throw new Error(`news csv must have columns timestamp_ms,text; got ${fields.join(",")}`);
  }
  return parsed.data.map((row, i) => {
    const ts = Number(row["timestamp_ms"]);
    if (!Number.isInteger(ts)) {
      throw new Error(`row ${i + 2}: bad timestamp '${row["timestamp_ms"]}'`);
    }
    return { timestamp: ts, text: row["text"] ?? "" };
  });
}

function tokenize(text: string): string[] {
  return text
    .toLowerCase()
    .split(/[^a-z0-9$#]+/)
    .filter((t) => t.length > 0);
}

/** Deterministic 768-dim vector for one text. */
export function hashingEmbedding(text: string, seed = 0): Float64Array {
  const counts = new Map<string, number>();
  for (const token of tokenize(text)) {
    counts.set(token, (counts.get(token) ?? 0) + 1);
  }
  const vector = new Float64Array(NEWS_DIM);
  // accumulate in sorted token order: float addition is not commutative at
  // the ulp level, and reorderings must not change the vector
  for (const token of [...counts.keys()].sort()) {
    const tokenRng = new Rng((fnv1a(token) ^ seed) >>> 0);
    const weight = 1 + Math.log(counts.get(token)!);
    for (let i = 0; i < NEWS_DIM; i++) {
      vector[i] += weight * tokenRng.gaussian();
    }
  }
  let norm = 0;
  for (let i = 0; i < NEWS_DIM; i++) norm += vector[i] * vector[i];
  norm = Math.sqrt(norm);
  if (norm > 0) {
    for (let i = 0; i < NEWS_DIM; i++) vector[i] /= norm;
  }
  return vector;
}

export function embedNews(items: NewsItem[], modelId: string, seed = 0): EmbeddingStore {
  if (modelId !== HASHING_MODEL) {
    throw new EnvironmentError(
      `news model '${modelId}' is not available in this environment; use ` +
        `'${HASHING_MODEL}' or import externally computed vectors as a ` +
        `news_raw store file`,
    );
  }
  const store = createStore("news_raw");
  for (const item of items) {
    addEntry(store, item.timestamp, hashingEmbedding(item.text, seed));
  }
  return store;
}
