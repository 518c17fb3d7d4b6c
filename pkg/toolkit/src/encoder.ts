/**
 * Contrastive chart-window encoder.
 *
 * Architecture: per-timestep input projection, random timestamp masking of
 * the latents (training only), then a stack of dilated residual convolutions
 * projecting to the output dimension. Training draws two overlapping random
 * crops of each window batch and optimizes hierarchical instance-wise plus
 * temporal contrastive losses on the overlap, so representations are stable
 * across views without any labels.
 *
 * The dilated convolutions are written as shifted matmuls (kernel taps at
 * t-d, t, t+d with zero padding): tfjs-core lacks gradients for dilated
 * conv kernels, and the shifted form is the same computation with full
 * gradient support.
 *
 * Everything stochastic (weight init, shuffles, crops, masks) runs off one
 * seed: a rerun writes byte-identical artifacts.
 */

import * as tf from "@tensorflow/tfjs";
import { readFileSync, renameSync, writeFileSync } from "node:fs";
import { Rng } from "./rng.js";

export interface EncoderSpec {
  epochs: number;
  batchSize: number;
  learningRate: number;
  hiddenDim: number;
  outputDim: number;
  window: number;
}

export const DEFAULT_SPEC: EncoderSpec = {
  epochs: 100,
  batchSize: 16,
  learningRate: 0.001,
  hiddenDim: 64,
  outputDim: 128,
  window: 6,
};

const MASK_RATE = 0.5;
const DILATIONS = [1, 2, 4];

interface ConvBlock {
  dilation: number;
  taps: [tf.Variable, tf.Variable, tf.Variable]; // kernels at t-d, t, t+d
  bias: tf.Variable;
}

export interface ChartEncoder {
  spec: EncoderSpec;
  featureDim: number;
  mean: Float64Array;
  std: Float64Array;
  projKernel: tf.Variable;
  projBias: tf.Variable;
  blocks: ConvBlock[];
  outTaps: [tf.Variable, tf.Variable, tf.Variable];
  outBias: tf.Variable;
}

function glorot(rng: Rng, fanIn: number, fanOut: number): tf.Tensor2D {
  const limit = Math.sqrt(6 / (fanIn + fanOut));
  const values = new Float32Array(fanIn * fanOut);
  for (let i = 0; i < values.length; i++) values[i] = (rng.next() * 2 - 1) * limit;
  return tf.tensor2d(values, [fanIn, fanOut]);
}

export function buildEncoder(
  featureDim: number,
  spec: EncoderSpec,
  mean: Float64Array,
  std: Float64Array,
  seed: number,
): ChartEncoder {
  const rng = new Rng((seed ^ 0x5eed) >>> 0);
  const h = spec.hiddenDim;
  const blocks: ConvBlock[] = DILATIONS.map((dilation) => ({
    dilation,
    taps: [
      tf.variable(glorot(rng, h, h)),
      tf.variable(glorot(rng, h, h)),
      tf.variable(glorot(rng, h, h)),
    ],
    bias: tf.variable(tf.zeros([h])),
  }));
  return {
    spec,
    featureDim,
    mean,
    std,
    projKernel: tf.variable(glorot(rng, featureDim, h)),
    projBias: tf.variable(tf.zeros([h])),
    blocks,
    outTaps: [
      tf.variable(glorot(rng, h, spec.outputDim)),
      tf.variable(glorot(rng, h, spec.outputDim)),
      tf.variable(glorot(rng, h, spec.outputDim)),
    ],
    outBias: tf.variable(tf.zeros([spec.outputDim])),
  };
}

export function encoderVariables(encoder: ChartEncoder): tf.Variable[] {
  const vars: tf.Variable[] = [encoder.projKernel, encoder.projBias];
  for (const block of encoder.blocks) vars.push(...block.taps, block.bias);
  vars.push(...encoder.outTaps, encoder.outBias);
  return vars;
}

function matMulTime(x: tf.Tensor3D, w: tf.Tensor2D | tf.Variable): tf.Tensor3D {
  const [b, t, c] = x.shape;
  const out = tf.matMul(x.reshape([b * t, c]), w as tf.Tensor2D);
  return out.reshape([b, t, (w as tf.Tensor2D).shape[1]]) as tf.Tensor3D;
}

/** Values from timestep t - offset (zero padded), so offset -d looks ahead. */
function timeShift(x: tf.Tensor3D, offset: number): tf.Tensor3D {
  if (offset === 0) return x;
  const [b, t, c] = x.shape;
  if (offset > 0) {
    const padded = tf.pad(x, [[0, 0], [offset, 0], [0, 0]]);
    return padded.slice([0, 0, 0], [b, t, c]) as tf.Tensor3D;
  }
  const padded = tf.pad(x, [[0, 0], [0, -offset], [0, 0]]);
  return padded.slice([0, -offset, 0], [b, t, c]) as tf.Tensor3D;
}

function dilatedTaps(
  x: tf.Tensor3D,
  taps: [tf.Variable, tf.Variable, tf.Variable],
  bias: tf.Variable,
  dilation: number,
): tf.Tensor3D {
  const past = matMulTime(timeShift(x, dilation), taps[0]);
  const here = matMulTime(x, taps[1]);
  const future = matMulTime(timeShift(x, -dilation), taps[2]);
  return past.add(here).add(future).add(bias) as tf.Tensor3D;
}

function forward(encoder: ChartEncoder, windows: tf.Tensor3D, mask?: tf.Tensor3D): tf.Tensor3D {
  let x = matMulTime(windows, encoder.projKernel).add(encoder.projBias) as tf.Tensor3D;
  if (mask) x = x.mul(mask);
  for (const block of encoder.blocks) {
    const y = tf.relu(dilatedTaps(x, block.taps, block.bias, block.dilation));
    x = x.add(y) as tf.Tensor3D;
  }
  return dilatedTaps(x, encoder.outTaps, encoder.outBias, 1);
}

function maxPoolTime(z: tf.Tensor3D): tf.Tensor3D {
  const [b, t, c] = z.shape;
  const pooled = tf.maxPool(z.reshape([b, t, 1, c]) as tf.Tensor4D, [2, 1], [2, 1], "valid");
  return pooled.reshape([b, Math.floor(t / 2), c]) as tf.Tensor3D;
}

function pairContrast(similarity: tf.Tensor3D, pairSize: number): tf.Tensor {
  // similarity: (G, 2n, 2n) with positives at (i, i+n) and (i+n, i).
  const n2 = 2 * pairSize;
  const diagMask = tf.eye(n2).mul(-1e9).expandDims(0);
  const masked = similarity.add(diagMask);
  const logDenominator = tf.logSumExp(masked, 2);
  const posIndex = tf.concat([
    tf.range(pairSize, n2, 1, "int32"),
    tf.range(0, pairSize, 1, "int32"),
  ]);
  const posMask = tf.oneHot(posIndex, n2).expandDims(0);
  const posScores = similarity.mul(posMask).sum(2);
  return logDenominator.sub(posScores).mean();
}

function instanceLoss(z1: tf.Tensor3D, z2: tf.Tensor3D): tf.Tensor {
  const batch = z1.shape[0];
  const z = tf.concat([z1, z2], 0); // (2B, T, C)
  const byTime = z.transpose([1, 0, 2]); // (T, 2B, C)
  const similarity = tf.matMul(byTime, byTime, false, true) as tf.Tensor3D;
  return pairContrast(similarity, batch);
}

function temporalLoss(z1: tf.Tensor3D, z2: tf.Tensor3D): tf.Tensor {
  const t = z1.shape[1];
  const z = tf.concat([z1, z2], 1) as tf.Tensor3D; // (B, 2T, C)
  const similarity = tf.matMul(z, z, false, true) as tf.Tensor3D;
  return pairContrast(similarity, t);
}

export function hierarchicalContrastiveLoss(z1: tf.Tensor3D, z2: tf.Tensor3D): tf.Tensor {
  let loss: tf.Tensor = tf.scalar(0);
  let depth = 0;
  let a = z1;
  let b = z2;
  for (;;) {
    loss = loss.add(instanceLoss(a, b));
    if (a.shape[1] > 1) loss = loss.add(temporalLoss(a, b));
    depth += 1;
    if (a.shape[1] <= 1) break;
    a = maxPoolTime(a);
    b = maxPoolTime(b);
  }
  return loss.div(depth);
}

function binaryMask(rng: Rng, batch: number, steps: number): tf.Tensor3D {
  const values = new Float32Array(batch * steps);
  for (let i = 0; i < values.length; i++) {
    values[i] = rng.next() < MASK_RATE ? 0 : 1;
  }
  return tf.tensor3d(values, [batch, steps, 1]);
}

export interface TrainResult {
  encoder: ChartEncoder;
  epochLosses: number[];
}

/**
 * Train on candidate-pool windows only. ``windows`` is (N, window, F) of
 * already-standardized rows; standardization stats travel with the encoder.
 */
export function trainChartEncoder(
  windows: number[][][],
  featureDim: number,
  spec: EncoderSpec,
  mean: Float64Array,
  std: Float64Array,
  seed: number,
): TrainResult {
  if (windows.length < 2) {
    throw new Error(`need at least 2 training windows, got ${windows.length}`);
  }
  const rng = new Rng(seed);
  const encoder = buildEncoder(featureDim, spec, mean, std, seed);
  const variables = encoderVariables(encoder);
  const optimizer = tf.train.adam(spec.learningRate);
  const data = tf.tensor3d(windows);
  const t = spec.window;

  const epochLosses: number[] = [];
  const order = [...Array(windows.length).keys()];
  for (let epoch = 0; epoch < spec.epochs; epoch++) {
    rng.shuffle(order);
    let epochLoss = 0;
    let batches = 0;
    for (let start = 0; start < order.length; start += spec.batchSize) {
      const idx = order.slice(start, start + spec.batchSize);
      if (idx.length < 2) continue; // contrastive loss needs pairs
      // two overlapping crops: [0, c2) and [c1, T), overlap [c1, c2)
      const c1 = rng.int(t - 1);
      const c2 = c1 + 1 + rng.int(t - c1);
      const lossValue = tf.tidy(() => {
        const batch = tf.gather(data, idx) as tf.Tensor3D;
        const view1 = batch.slice([0, 0, 0], [idx.length, c2, featureDim]) as tf.Tensor3D;
        const view2 = batch.slice([0, c1, 0], [idx.length, t - c1, featureDim]) as tf.Tensor3D;
        const mask1 = binaryMask(rng, idx.length, c2);
        const mask2 = binaryMask(rng, idx.length, t - c1);
        const loss = optimizer.minimize(
          () => {
            const r1 = forward(encoder, view1, mask1);
            const r2 = forward(encoder, view2, mask2);
            const overlap = c2 - c1;
            const o1 = r1.slice([0, c1, 0], [idx.length, overlap, spec.outputDim]) as tf.Tensor3D;
            const o2 = r2.slice([0, 0, 0], [idx.length, overlap, spec.outputDim]) as tf.Tensor3D;
            return hierarchicalContrastiveLoss(o1, o2) as tf.Scalar;
          },
          true,
          variables,
        )!;
        return loss.dataSync()[0];
      });
      epochLoss += lossValue;
      batches += 1;
    }
    epochLosses.push(batches > 0 ? epochLoss / batches : 0);
  }
  data.dispose();
  optimizer.dispose();
  return { encoder, epochLosses };
}

/** Standardize raw rows with the encoder's candidate-pool statistics. */
export function standardizeRow(encoder: ChartEncoder, row: ArrayLike<number>): Float64Array {
  const out = new Float64Array(encoder.featureDim);
  for (let j = 0; j < encoder.featureDim; j++) {
    const std = encoder.std[j] > 0 ? encoder.std[j] : 1;
    out[j] = (row[j] - encoder.mean[j]) / std;
  }
  return out;
}

/**
 * Embedding of one window per requested row index (the window covers the
 * ``spec.window`` rows ending there): the final timestep's representation,
 * masking disabled, so identical windows map to identical vectors.
 */
export function embedWindows(
  encoder: ChartEncoder,
  rows: Float64Array[],
  rowIndices: number[],
): Float64Array[] {
  const t = encoder.spec.window;
  const out: Float64Array[] = [];
  const chunkSize = 256;
  for (let start = 0; start < rowIndices.length; start += chunkSize) {
    const chunk = rowIndices.slice(start, start + chunkSize);
    const batch: number[][][] = chunk.map((rowIdx) => {
      if (rowIdx < t - 1) throw new Error(`row ${rowIdx} lacks a full ${t}-row window`);
      const win: number[][] = [];
      for (let k = rowIdx - t + 1; k <= rowIdx; k++) {
        win.push(Array.from(standardizeRow(encoder, rows[k])));
      }
      return win;
    });
    const vectors = tf.tidy(() => {
      const representation = forward(encoder, tf.tensor3d(batch));
      const last = representation.slice([0, t - 1, 0], [chunk.length, 1, encoder.spec.outputDim]);
      return last.reshape([chunk.length, encoder.spec.outputDim]).arraySync() as number[][];
    });
    for (const vec of vectors) out.push(Float64Array.from(vec));
  }
  return out;
}

interface CheckpointPayload {
  kind: string;
  spec: EncoderSpec;
  featureDim: number;
  mean: number[];
  std: number[];
  weights: { shape: number[]; values: number[] }[];
}

export function saveCheckpoint(encoder: ChartEncoder, path: string): void {
  const payload: CheckpointPayload = {
    kind: "chartmatch-chart-encoder",
    spec: encoder.spec,
    featureDim: encoder.featureDim,
    mean: Array.from(encoder.mean),
    std: Array.from(encoder.std),
    weights: encoderVariables(encoder).map((w) => ({
      shape: w.shape.slice(),
      values: Array.from(w.dataSync()),
    })),
  };
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, JSON.stringify(payload), "utf-8");
  renameSync(tmp, path);
}

export function loadCheckpoint(path: string): ChartEncoder {
  const payload = JSON.parse(readFileSync(path, "utf-8")) as CheckpointPayload;
  if (payload.kind !== "chartmatch-chart-encoder") {
    throw new Error(`${path} is not a chart encoder checkpoint`);
  }
  const encoder = buildEncoder(
    payload.featureDim,
    payload.spec,
    Float64Array.from(payload.mean),
    Float64Array.from(payload.std),
    0,
  );
  const variables = encoderVariables(encoder);
  if (variables.length !== payload.weights.length) {
    throw new Error(`checkpoint has ${payload.weights.length} weight tensors, `
      + `model expects ${variables.length}`);
  }
  variables.forEach((variable, i) => {
    const saved = payload.weights[i];
    variable.assign(tf.tensor(saved.values, saved.shape as number[]));
  });
  return encoder;
}
