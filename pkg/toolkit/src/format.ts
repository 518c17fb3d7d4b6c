/**
 * The embedding file format shared with the main pipeline:
 *
 *     dim=<N> kind=<chart|news_raw|news_reduced>
 *     <timestamp_ms>,<v1>,...,<vN>
 *
 * Files are written atomically (tmp + rename) and floats use the shortest
 * round-trip decimal form, so a seeded rerun reproduces identical bytes.
 */

import { readFileSync, renameSync, writeFileSync } from "node:fs";

export const KIND_DIMS: Record<string, number> = {
  chart: 128,
  news_raw: 768,
  news_reduced: 128,
};

export type StoreKind = keyof typeof KIND_DIMS;

export interface EmbeddingStore {
  kind: StoreKind;
  dim: number;
  /** timestamp -> vector, iterated in ascending timestamp order. */
  entries: Map<number, Float64Array>;
}

export function createStore(kind: StoreKind): EmbeddingStore {
  const dim = KIND_DIMS[kind];
  if (dim === undefined) throw new Error(`unknown embedding kind '${kind}'`);
  return { kind, dim, entries: new Map() };
}

export function addEntry(store: EmbeddingStore, timestamp: number, values: ArrayLike<number>): void {
  if (values.length !== store.dim) {
    throw new Error(`${store.kind} store expects dim ${store.dim}, got ${values.length} at ${timestamp}`);
  }
  if (store.entries.has(timestamp)) {
    throw new Error(`duplicate timestamp ${timestamp}`);
  }
  for (let i = 0; i < values.length; i++) {
    if (!Number.isFinite(values[i])) {
      throw new Error(`non-finite value at ${timestamp}[${i}]`);
    }
  }
  store.entries.set(timestamp, Float64Array.from(values as ArrayLike<number>));
}

export function sortedTimestamps(store: EmbeddingStore): number[] {
  return [...store.entries.keys()].sort((a, b) => a - b);
}

export function serializeStore(store: EmbeddingStore): string {
  const lines = [`dim=${store.dim} kind=${store.kind}`];
  for (const ts of sortedTimestamps(store)) {
    const vec = store.entries.get(ts)!;
    lines.push(`${ts},${Array.from(vec, (v) => v.toString()).join(",")}`);
  }
  return lines.join("\n") + "\n";
}

export function parseStore(text: string): EmbeddingStore {
  const lines = text.split("\n");
  if (lines.length === 0 || !lines[0].trim()) {
    throw new Error("empty embedding file, header required");
  }
  const header: Record<string, string> = {};
  for (const token of lines[0].trim().split(/\s+/)) {
    const eq = token.indexOf("=");
    if (eq < 0) throw new Error(`bad header token '${token}'`);
    header[token.slice(0, eq)] = token.slice(eq + 1);
  }
  const kind = header["kind"] as StoreKind;
  const dim = Number(header["dim"]);
  if (!(kind in KIND_DIMS)) throw new Error(`unknown embedding kind '${kind}'`);
  if (dim !== KIND_DIMS[kind]) {
    throw new Error(`kind ${kind} requires dim ${KIND_DIMS[kind]}, header says ${dim}`);
  }
  const store = createStore(kind);
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const parts = line.split(",");
    if (parts.length !== dim + 1) {
      throw new Error(`line ${i + 1}: expected ${dim} values, got ${parts.length - 1}`);
    }
    const ts = Number(parts[0]);
    if (!Number.isInteger(ts)) throw new Error(`line ${i + 1}: bad timestamp '${parts[0]}'`);
    const values = new Float64Array(dim);
    for (let j = 0; j < dim; j++) {
      values[j] = Number(parts[j + 1]);
      if (Number.isNaN(values[j])) throw new Error(`line ${i + 1}: bad float '${parts[j + 1]}'`);
    }
    addEntry(store, ts, values);
  }
  return store;
}

export function writeStore(store: EmbeddingStore, path: string): void {
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, serializeStore(store), "utf-8");
  renameSync(tmp, path);
}

export function readStore(path: string): EmbeddingStore {
  return parseStore(readFileSync(path, "utf-8"));
}
