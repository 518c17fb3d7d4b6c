#!/usr/bin/env node
/**
 * chartmatch-toolkit: produce the neural artifacts the main pipeline
 * imports through the shared embedding file format.
 *
 *   train-chart-encoder  contrastive encoder on candidate-pool windows
 *   embed-charts         chart store (dim 128) from a trained checkpoint
 *   embed-news           news_raw store (dim 768) from a timestamped CSV
 *   reduce-news          news_reduced store (dim 128) via seeded UMAP
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import {
  DEFAULT_SPEC,
  embedWindows,
  loadCheckpoint,
  saveCheckpoint,
  trainChartEncoder,
} from "./encoder.js";
import { candidateRowCount, readFeatureCsv } from "./featureCsv.js";
import { addEntry, createStore, readStore, writeStore } from "./format.js";
import { EnvironmentError, embedNews, readNewsCsv } from "./news.js";
import { DEFAULT_REDUCE, reduceNews } from "./reduce.js";

function columnStats(rows: Float64Array[], count: number): { mean: Float64Array; std: Float64Array } {
  const dim = rows[0].length;
  const mean = new Float64Array(dim);
  const std = new Float64Array(dim);
  for (let i = 0; i < count; i++) {
    for (let j = 0; j < dim; j++) mean[j] += rows[i][j];
  }
  for (let j = 0; j < dim; j++) mean[j] /= count;
  for (let i = 0; i < count; i++) {
    for (let j = 0; j < dim; j++) {
      const d = rows[i][j] - mean[j];
      std[j] += d * d;
    }
  }
  for (let j = 0; j < dim; j++) std[j] = Math.sqrt(std[j] / count);
  return { mean, std };
}

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .scriptName("chartmatch-toolkit")
    .command(
      "train-chart-encoder",
      "Train the contrastive chart encoder on candidate-pool windows",
      (args) =>
        args
          .option("features", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true })
          .option("candidate-fraction", { type: "number", default: 0.8 })
          .option("warmup", { type: "number", default: 40, describe: "bars the feature step dropped" })
          .option("epochs", { type: "number", default: DEFAULT_SPEC.epochs })
          .option("batch-size", { type: "number", default: DEFAULT_SPEC.batchSize })
          .option("learning-rate", { type: "number", default: DEFAULT_SPEC.learningRate })
          .option("hidden-dim", { type: "number", default: DEFAULT_SPEC.hiddenDim })
          .option("output-dim", { type: "number", default: DEFAULT_SPEC.outputDim })
          .option("window", { type: "number", default: DEFAULT_SPEC.window })
          .option("seed", { type: "number", default: 7 }),
      (argv) => {
        const table = readFeatureCsv(argv.features);
        const candidateRows = candidateRowCount(table, argv["candidate-fraction"], argv.warmup);
        const spec = {
          epochs: argv.epochs,
          batchSize: argv["batch-size"],
          learningRate: argv["learning-rate"],
          hiddenDim: argv["hidden-dim"],
          outputDim: argv["output-dim"],
          window: argv.window,
        };
        if (candidateRows < spec.window + 1) {
          throw new Error(`only ${candidateRows} candidate rows; need at least ${spec.window + 1}`);
        }
        const { mean, std } = columnStats(table.rows, candidateRows);
        const windows: number[][][] = [];
        for (let t = spec.window - 1; t < candidateRows; t++) {
          const win: number[][] = [];
          for (let k = t - spec.window + 1; k <= t; k++) {
            const row = table.rows[k];
            const standardized = new Array(row.length);
            for (let j = 0; j < row.length; j++) {
              standardized[j] = (row[j] - mean[j]) / (std[j] > 0 ? std[j] : 1);
            }
            win.push(standardized);
          }
          windows.push(win);
        }
        const { encoder, epochLosses } = trainChartEncoder(
          windows, table.names.length, spec, mean, std, argv.seed);
        saveCheckpoint(encoder, argv.out);
        const first = epochLosses[0]?.toFixed(4);
        const last = epochLosses[epochLosses.length - 1]?.toFixed(4);
        console.log(
          `trained on ${windows.length} candidate windows for ${spec.epochs} epochs ` +
            `(loss ${first} -> ${last}); checkpoint at ${argv.out}`,
        );
      },
    )
    .command(
      "embed-charts",
      "Write a chart embedding store for every full window in a feature CSV",
      (args) =>
        args
          .option("features", { type: "string", demandOption: true })
          .option("checkpoint", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true }),
      (argv) => {
        const table = readFeatureCsv(argv.features);
        const encoder = loadCheckpoint(argv.checkpoint);
        if (table.names.length !== encoder.featureDim) {
          throw new Error(
            `checkpoint expects ${encoder.featureDim} features, csv has ${table.names.length}`,
          );
        }
        const rowIndices: number[] = [];
        for (let t = encoder.spec.window - 1; t < table.rows.length; t++) rowIndices.push(t);
        const vectors = embedWindows(encoder, table.rows, rowIndices);
        const store = createStore("chart");
        rowIndices.forEach((t, i) => addEntry(store, table.timestamps[t], vectors[i]));
        writeStore(store, argv.out);
        console.log(`wrote ${store.entries.size} chart embeddings (dim ${store.dim}) to ${argv.out}`);
      },
    )
    .command(
      "embed-news",
      "Embed a timestamp_ms,text news CSV into a news_raw store",
      (args) =>
        args
          .option("news", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true })
          .option("model", { type: "string", default: "hashing" })
          .option("seed", { type: "number", default: 0 }),
      (argv) => {
        const items = readNewsCsv(argv.news);
        const store = embedNews(items, argv.model, argv.seed);
        writeStore(store, argv.out);
        console.log(`wrote ${store.entries.size} news embeddings (dim ${store.dim}) to ${argv.out}`);
      },
    )
    .command(
      "reduce-news",
      "UMAP-reduce a news_raw store to 128 dims (fit on candidate period only)",
      (args) =>
        args
          .option("news-raw", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true })
          .option("candidate-end-ms", { type: "number" })
          .option("seed", { type: "number", default: DEFAULT_REDUCE.seed })
          .option("n-neighbors", { type: "number", default: DEFAULT_REDUCE.nNeighbors })
          .option("min-dist", { type: "number", default: DEFAULT_REDUCE.minDist }),
      (argv) => {
        const store = readStore(argv["news-raw"]);
        const reduced = reduceNews(store, {
          seed: argv.seed,
          nNeighbors: argv["n-neighbors"],
          minDist: argv["min-dist"],
          candidateEndMs: argv["candidate-end-ms"],
        });
        writeStore(reduced, argv.out);
        console.log(`wrote ${reduced.entries.size} reduced news embeddings to ${argv.out}`);
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      if (err instanceof EnvironmentError) {
        console.error(`environment error: ${err.message}`);
        process.exit(3);
      }
      console.error(msg ?? err?.message ?? "unknown error");
      process.exit(1);
    })
    .parseAsync();
}

main().catch((err) => {
  if (err instanceof EnvironmentError) {
    console.error(`environment error: ${err.message}`);
    process.exit(3);
  }
  console.error(err?.message ?? err);
  process.exit(1);
});
