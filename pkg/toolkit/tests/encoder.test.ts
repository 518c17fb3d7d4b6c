import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import {
  EncoderSpec,
  embedWindows,
  loadCheckpoint,
  saveCheckpoint,
  trainChartEncoder,
} from "../src/encoder.js";

const TINY: EncoderSpec = {
  epochs: 3,
  batchSize: 8,
  learningRate: 0.001,
  hiddenDim: 16,
  outputDim: 128,
  window: 6,
};

/** Sinusoid corpus: smooth multi-phase waves, the classic smoke input. */
function sineRows(n: number, dim: number): Float64Array[] {
  const rows: Float64Array[] = [];
  for (let i = 0; i < n; i++) {
    const row = new Float64Array(dim);
    for (let j = 0; j < dim; j++) {
      row[j] = Math.sin((2 * Math.PI * (i + 3 * j)) / 20) + 0.1 * Math.sin(i / 3);
    }
    rows.push(row);
  }
  return rows;
}

function windowsOf(rows: Float64Array[], window: number): number[][][] {
  const out: number[][][] = [];
  for (let t = window - 1; t < rows.length; t++) {
    const win: number[][] = [];
    for (let k = t - window + 1; k <= t; k++) win.push(Array.from(rows[k]));
    out.push(win);
  }
  return out;
}

function zeroStats(dim: number) {
  return { mean: new Float64Array(dim), std: new Float64Array(dim).fill(1) };
}

describe("chart encoder", () => {
  it("emits 128-dim vectors for any window", () => {
    const rows = sineRows(30, 5);
    const { mean, std } = zeroStats(5);
    const { encoder } = trainChartEncoder(windowsOf(rows, 6), 5, { ...TINY, epochs: 1 },
      mean, std, 7);
    const vectors = embedWindows(encoder, rows, [5, 12, 29]);
    expect(vectors).toHaveLength(3);
    for (const vec of vectors) {
      expect(vec.length).toBe(128);
      expect(vec.every(Number.isFinite)).toBe(true);
    }
  });

  it("maps identical windows to identical vectors at inference", () => {
    const rows = sineRows(40, 4);
    // plant an exact repeat of the window ending at row 9 at rows 20..25
    for (let k = 0; k < 6; k++) rows[20 + k] = Float64Array.from(rows[4 + k]);
    const { mean, std } = zeroStats(4);
    const { encoder } = trainChartEncoder(windowsOf(rows, 6), 4, { ...TINY, epochs: 1 },
      mean, std, 3);
    const [a, b] = embedWindows(encoder, rows, [9, 25]);
    expect(Array.from(a)).toEqual(Array.from(b));
    const [again] = embedWindows(encoder, rows, [9]);
    expect(Array.from(again)).toEqual(Array.from(a));
  });

  it("drives the contrastive loss down on a sinusoid corpus", () => {
    const rows = sineRows(70, 6);
    const { mean, std } = zeroStats(6);
    const spec = { ...TINY, epochs: 10 };
    const { epochLosses } = trainChartEncoder(windowsOf(rows, 6), 6, spec, mean, std, 11);
    expect(epochLosses).toHaveLength(10);
    expect(epochLosses[9]).toBeLessThan(epochLosses[0]);
  });

  it("round-trips through a checkpoint", () => {
    const rows = sineRows(30, 5);
    const { mean, std } = zeroStats(5);
    const { encoder } = trainChartEncoder(windowsOf(rows, 6), 5, { ...TINY, epochs: 2 },
      mean, std, 5);
    const dir = mkdtempSync(join(tmpdir(), "ckpt-"));
    const path = join(dir, "encoder.json");
    saveCheckpoint(encoder, path);
    const restored = loadCheckpoint(path);
    expect(restored.spec).toEqual(encoder.spec);
    const [a] = embedWindows(encoder, rows, [10]);
    const [b] = embedWindows(restored, rows, [10]);
    expect(Array.from(b)).toEqual(Array.from(a));
  });

  it("trains deterministically for a fixed seed", () => {
    const rows = sineRows(30, 4);
    const { mean, std } = zeroStats(4);
    const run = () => {
      const { encoder, epochLosses } = trainChartEncoder(
        windowsOf(rows, 6), 4, { ...TINY, epochs: 2 }, mean, std, 21);
      const [vec] = embedWindows(encoder, rows, [15]);
      return { vec: Array.from(vec), epochLosses };
    };
    const a = run();
    const b = run();
    expect(b.vec).toEqual(a.vec);
    expect(b.epochLosses).toEqual(a.epochLosses);
  });

  it("refuses to train on fewer than two windows", () => {
    const rows = sineRows(6, 4);
    const { mean, std } = zeroStats(4);
    expect(() => trainChartEncoder(windowsOf(rows, 6), 4, TINY, mean, std, 1)).toThrow(
      /at least 2/,
    );
  });
});
