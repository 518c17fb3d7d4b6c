/**
 * End-to-end conformance: candles -> primary features CSV -> toolkit
 * artifacts -> back into the primary trainer. Exercises every external
 * interface between the two packages; requires the primary package to be
 * installed (skips otherwise).
 */

import { execFileSync } from "node:child_process";
import { existsSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import { embedWindows, loadCheckpoint, saveCheckpoint, trainChartEncoder } from "../src/encoder.js";
import { candidateRowCount, readFeatureCsv } from "../src/featureCsv.js";
import { addEntry, createStore, readStore, serializeStore, writeStore } from "../src/format.js";
import { embedNews } from "../src/news.js";
import { Rng } from "../src/rng.js";
import { reduceNews } from "../src/reduce.js";
import { loadThroughPrimary, pythonLoaderAvailable } from "./format.test.js";

const H4 = 14_400_000;
const BASE_TS = 1_599_998_400_000;

function writeCandleCsv(path: string, bars: number, seed = 21): number[] {
  const rng = new Rng(seed);
  const lines = ["open_time_ms,open,high,low,close,volume"];
  const timestamps: number[] = [];
  let close = 20_000;
  for (let i = 0; i < bars; i++) {
    const open = close;
    close = open * Math.exp(rng.gaussian() * 0.01);
    const high = Math.max(open, close) * (1 + Math.abs(rng.gaussian()) * 0.004);
    const low = Math.min(open, close) * (1 - Math.abs(rng.gaussian()) * 0.004);
    const volume = 50 + rng.next() * 450;
    const ts = BASE_TS + i * H4;
    timestamps.push(ts);
    lines.push(`${ts},${open},${high},${low},${close},${volume}`);
  }
  writeFileSync(path, lines.join("\n") + "\n");
  return timestamps;
}

function runPrimary(args: string[], cwd?: string): string {
  return execFileSync("chartmatch", args, { encoding: "utf-8", cwd });
}

function primaryAvailable(): boolean {
  if (!pythonLoaderAvailable()) return false;
  try {
    execFileSync("chartmatch", ["--help"], { stdio: "pipe" });
    return true;
  } catch {
    return false;
  }
}

describe("toolkit <-> pipeline conformance", () => {
  it("feeds the primary trainer with toolkit-made stores", () => {
    if (!primaryAvailable()) return;
    const dir = mkdtempSync(join(tmpdir(), "e2e-"));
    const candles = join(dir, "candles.csv");
    const timestamps = writeCandleCsv(candles, 180);

    // primary: features
    const featuresCsv = join(dir, "features.csv");
    runPrimary(["features", "--data", candles, "--out", featuresCsv]);
    const table = readFeatureCsv(featuresCsv);
    expect(table.names.length).toBe(69);
    expect(table.rows.length).toBe(140);

    // toolkit: encoder trained on candidate windows only
    const candidates = candidateRowCount(table, 0.8, 40);
    expect(candidates).toBe(Math.floor(0.8 * 180) - 40);
    const checkpoint = join(dir, "encoder.json");
    runToolkitTraining(table, candidates, checkpoint);

    // toolkit: chart store for every full window
    const chartStore = createStore("chart");
    const encoder = loadCheckpoint(checkpoint);
    const rowIndices = [];
    for (let t = encoder.spec.window - 1; t < table.rows.length; t++) rowIndices.push(t);
    const vectors = embedWindows(encoder, table.rows, rowIndices);
    rowIndices.forEach((t, i) => addEntry(chartStore, table.timestamps[t], vectors[i]));
    const chartPath = join(dir, "chart.emb");
    writeStore(chartStore, chartPath);
    const chartInfo = loadThroughPrimary(chartPath);
    expect(chartInfo).toEqual({ kind: "chart", dim: 128, count: rowIndices.length });

    // toolkit: news pipeline (hashing embedder, seeded UMAP)
    const newsCsv = join(dir, "news.csv");
    const newsLines = ["timestamp_ms,text"];
    const vocab = ["rally", "selloff", "etf", "halving", "outage", "regulation"];
    const rng = new Rng(5);
    for (let i = 0; i < 170; i++) {
      const words = [vocab[rng.int(vocab.length)], vocab[rng.int(vocab.length)], `n${i}`];
      newsLines.push(`${timestamps[i] + 60_000},${words.join(" ")}`);
    }
    writeFileSync(newsCsv, newsLines.join("\n") + "\n");
    const rawStore = embedNews(
      newsLines.slice(1).map((line) => {
        const comma = line.indexOf(",");
        return { timestamp: Number(line.slice(0, comma)), text: line.slice(comma + 1) };
      }),
      "hashing",
    );
    const rawPath = join(dir, "news_raw.emb");
    writeStore(rawStore, rawPath);
    expect(loadThroughPrimary(rawPath)).toEqual({ kind: "news_raw", dim: 768, count: 170 });

    const reduced = reduceNews(rawStore, {
      seed: 7, nNeighbors: 15, minDist: 0.1,
      candidateEndMs: timestamps[Math.floor(0.8 * 180) - 1] + H4,
    });
    const reducedPath = join(dir, "news_reduced.emb");
    writeStore(reduced, reducedPath);
    expect(loadThroughPrimary(reducedPath)).toEqual({
      kind: "news_reduced", dim: 128, count: 170,
    });

    // primary: full training run consuming the toolkit stores
    const outDir = join(dir, "out");
    const config = [
      "data:", `  csv: ${candles}`, "experiment:", "  seed: 5", "  k_grid: [5, 10]",
      "  random_repetitions: 2", "train:", "  rounds: 6", "  max_depth: 3",
      "backtest:", "  method: multimodal", "  k: 5", "embeddings:",
      `  chart: ${chartPath}`, `  news_reduced: ${reducedPath}`,
      `output_dir: ${outDir}`,
    ].join("\n");
    const configPath = join(dir, "experiment.yml");
    writeFileSync(configPath, config + "\n");
    runPrimary(["train", "--config", configPath]);
    expect(existsSync(join(outDir, "results.csv"))).toBe(true);
    expect(existsSync(join(outDir, "equity.csv"))).toBe(true);
    const results = readFileSync(join(outDir, "results.csv"), "utf-8");
    expect(results.startsWith("method,metric,no_fe,top_5,top_10,average")).toBe(true);
  }, 300_000);

  it("runs the command-line entrypoints", () => {
    const dir = mkdtempSync(join(tmpdir(), "cli-"));
    const newsCsv = join(dir, "news.csv");
    writeFileSync(newsCsv, 'timestamp_ms,text\n1000,"liquidity returns, funding resets"\n2000,etf flows\n');
    const out = join(dir, "news_raw.emb");
    const stdout = execFileSync(
      "npx", ["tsx", "src/cli.ts", "embed-news", "--news", newsCsv, "--out", out],
      { encoding: "utf-8", cwd: join(import.meta.dirname, "..") },
    );
    expect(stdout).toContain("wrote 2 news embeddings");
    const store = readStore(out);
    expect(store.kind).toBe("news_raw");
    expect(store.entries.size).toBe(2);
  }, 120_000);

  it("fails with a clear environment error for unavailable news models", () => {
    const dir = mkdtempSync(join(tmpdir(), "cli-"));
    const newsCsv = join(dir, "news.csv");
    writeFileSync(newsCsv, "timestamp_ms,text\n1000,headline\n");
    let code = 0;
    let stderr = "";
    try {
      execFileSync(
        "npx", ["tsx", "src/cli.ts", "embed-news", "--news", newsCsv,
          "--out", join(dir, "x.emb"), "--model", "crypto-deberta"],
        { encoding: "utf-8", cwd: join(import.meta.dirname, "..") },
      );
    } catch (err: any) {
      code = err.status;
      stderr = String(err.stderr);
    }
    expect(code).toBe(3);
    expect(stderr).toContain("environment error");
  }, 120_000);

  it("produces byte-identical seeded chart exports", () => {
    const dir = mkdtempSync(join(tmpdir(), "det-"));
    const candles = join(dir, "candles.csv");
    writeCandleCsv(candles, 120, 9);
    const rows: Float64Array[] = [];
    const timestamps: number[] = [];
    // small standalone feature table: raw candle-derived columns suffice here
    const text = readFileSync(candles, "utf-8").trim().split("\n").slice(1);
    for (const line of text) {
      const parts = line.split(",").map(Number);
      timestamps.push(parts[0]);
      rows.push(Float64Array.from(parts.slice(1)));
    }
    const exportOnce = () => {
      const { encoder } = trainChartEncoder(
        windowsOf(rows, 6), rows[0].length,
        { epochs: 2, batchSize: 8, learningRate: 0.001, hiddenDim: 8, outputDim: 128, window: 6 },
        new Float64Array(rows[0].length), new Float64Array(rows[0].length).fill(1), 17);
      const store = createStore("chart");
      const indices = [];
      for (let t = 5; t < rows.length; t++) indices.push(t);
      const vectors = embedWindows(encoder, rows, indices);
      indices.forEach((t, i) => addEntry(store, timestamps[t], vectors[i]));
      return serializeStore(store);
    };
    expect(exportOnce()).toBe(exportOnce());
  }, 120_000);
});

function windowsOf(rows: Float64Array[], window: number): number[][][] {
  const out: number[][][] = [];
  for (let t = window - 1; t < rows.length; t++) {
    const win: number[][] = [];
    for (let k = t - window + 1; k <= t; k++) win.push(Array.from(rows[k]));
    out.push(win);
  }
  return out;
}

function runToolkitTraining(table: ReturnType<typeof readFeatureCsv>, candidates: number,
                            checkpointPath: string): void {
  const dim = table.names.length;
  const mean = new Float64Array(dim);
  const std = new Float64Array(dim);
  for (let i = 0; i < candidates; i++) {
    for (let j = 0; j < dim; j++) mean[j] += table.rows[i][j];
  }
  for (let j = 0; j < dim; j++) mean[j] /= candidates;
  for (let i = 0; i < candidates; i++) {
    for (let j = 0; j < dim; j++) std[j] += (table.rows[i][j] - mean[j]) ** 2;
  }
  for (let j = 0; j < dim; j++) std[j] = Math.sqrt(std[j] / candidates) || 1;
  const windows: number[][][] = [];
  for (let t = 5; t < candidates; t++) {
    const win: number[][] = [];
    for (let k = t - 5; k <= t; k++) {
      win.push(Array.from(table.rows[k], (v, j) => (v - mean[j]) / (std[j] > 0 ? std[j] : 1)));
    }
    windows.push(win);
  }
  const { encoder } = trainChartEncoder(windows, dim,
    { epochs: 2, batchSize: 16, learningRate: 0.001, hiddenDim: 16, outputDim: 128, window: 6 },
    mean, std, 13);
  saveCheckpoint(encoder, checkpointPath);
}
