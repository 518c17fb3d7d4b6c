/** Reader for the main pipeline's feature CSV (timestamp_ms + named columns). */

import { readFileSync } from "node:fs";

export interface FeatureTable {
  timestamps: number[];
  names: string[];
  rows: Float64Array[];
}

export function readFeatureCsv(path: string): FeatureTable {
  const text = readFileSync(path, "utf-8");
  const lines = text.split("\n");
  const header = lines[0]?.trim().split(",") ?? [];
  if (header[0] !== "timestamp_ms") {
    throw new Error(`feature csv must start with a timestamp_ms column, got '${header[0]}'`);
  }
  const names = header.slice(1);
  const timestamps: number[] = [];
  const rows: Float64Array[] = [];
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const parts = line.split(",");
    if (parts.length !== names.length + 1) {
      throw new Error(`line ${i + 1}: expected ${names.length + 1} fields, got ${parts.length}`);
    }
    timestamps.push(Number(parts[0]));
    const row = new Float64Array(names.length);
    for (let j = 0; j < names.length; j++) {
      row[j] = Number(parts[j + 1]);
      if (Number.isNaN(row[j])) throw new Error(`line ${i + 1}: bad float '${parts[j + 1]}'`);
    }
    rows.push(row);
  }
  return { timestamps, names, rows };
}

/**
 * Index of the first row past the candidate boundary. The boundary is
 * defined over the bar timeline (rows + warmup leading bars the feature
 * step dropped), mirroring how the main pipeline splits its dataset.
 */
export function candidateRowCount(table: FeatureTable, candidateFraction: number, warmup: number): number {
  const totalBars = table.rows.length + warmup;
  const boundary = Math.floor(candidateFraction * totalBars); // bars [0, boundary) are candidates
  return Math.max(0, Math.min(table.rows.length, boundary - warmup));
}
