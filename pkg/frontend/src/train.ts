/**
 * Full-batch training loop for the warm-basis network, with per-epoch loss
 * history (raw and normalized to the initial value) and JSON checkpoints.
 */

import * as fs from 'fs';
import * as tf from '@tensorflow/tfjs';

import { TrainingPair } from './bundle';
import { angleLossTf, distanceLossTf } from './losses';
import {
  ModelConfig,
  ModelParams,
  buildModel,
  defaultConfig,
  forward,
  trainableVariables,
} from './model';

export type LossKind = 'angle' | 'distance';

export interface TrainOptions {
  loss: LossKind;
  epochs: number;
  seed: number;
  learningRate?: number;
  baseChannels?: number;
  attention?: boolean;
  /** stop once loss / initial loss falls below this (default: run all epochs) */
  stopBelowNormalized?: number;
}

export interface TrainResult {
  params: ModelParams;
  /** raw loss per epoch, entry 0 evaluated before the first update */
  history: number[];
  /** history divided by its first entry */
  normalized: number[];
}

export function trainModel(pairs: TrainingPair[], opts: TrainOptions): TrainResult {
  if (pairs.length === 0) throw new Error('training needs at least one pair');
  if (opts.epochs < 1) throw new Error('epochs must be >= 1');
  const inShape = pairs[0].input.shape;
  const outShape = pairs[0].target.shape;
  const cfg = defaultConfig(inShape, outShape, opts.seed, {
    baseChannels: opts.baseChannels ?? 16,
    attention: opts.attention ?? true,
  });
  const params = buildModel(cfg);

  const inputs = tf.stack(pairs.map((p) => p.input)) as tf.Tensor4D;
  const targets = tf.stack(pairs.map((p) => p.target)).reshape(
    [pairs.length, outShape[0] * outShape[1] * outShape[2]]) as tf.Tensor2D;
  const lossFn = opts.loss === 'angle' ? angleLossTf : distanceLossTf;

  const evalLoss = (): tf.Scalar => {
    const pred = forward(params, inputs).reshape(targets.shape) as tf.Tensor2D;
    return lossFn(pred, targets);
  };

  const optimizer = tf.train.adam(opts.learningRate ?? 2e-3);
  const history: number[] = [tf.tidy(() => evalLoss()).dataSync()[0]];
  const vars = trainableVariables(params);
  for (let epoch = 0; epoch < opts.epochs; epoch++) {
    const value = optimizer.minimize(evalLoss, true, vars);
    history.push(value!.dataSync()[0]);
    value!.dispose();
    if (opts.stopBelowNormalized !== undefined &&
        history[history.length - 1] < opts.stopBelowNormalized * history[0]) {
      break;
    }
  }
  optimizer.dispose();
  inputs.dispose();
  targets.dispose();

  const first = history[0];
  return {
    params,
    history,
    normalized: history.map((v) => v / first),
  };
}

export function predict(params: ModelParams, input: tf.Tensor3D): tf.Tensor3D {
  return tf.tidy(() => {
    const batched = input.expandDims(0) as tf.Tensor4D;
    return forward(params, batched).squeeze([0]) as tf.Tensor3D;
  });
}

// ---------------------------------------------------------------------------
// checkpoints: JSON with base64 float32 payloads, in trainable-variable order

export function saveCheckpoint(path: string, params: ModelParams): void {
  const variables = trainableVariables(params).map((v) => {
    const data = v.dataSync() as Float32Array;
    return {
      shape: v.shape,
      data: Buffer.from(data.buffer, data.byteOffset, data.byteLength).toString('base64'),
    };
  });
  fs.writeFileSync(path, JSON.stringify({ config: params.cfg, variables }));
}

export function loadCheckpoint(path: string): ModelParams {
  const raw = JSON.parse(fs.readFileSync(path, 'utf8')) as {
    config: ModelConfig;
    variables: { shape: number[]; data: string }[];
  };
  const params = buildModel(raw.config);
  const vars = trainableVariables(params);
  if (vars.length !== raw.variables.length) {
    throw new Error('checkpoint does not match the model architecture');
  }
  vars.forEach((v, i) => {
    const buf = Buffer.from(raw.variables[i].data, 'base64');
    const data = new Float32Array(buf.buffer, buf.byteOffset, buf.byteLength / 4);
    v.assign(tf.tensor(data, raw.variables[i].shape as number[]));
  });
  return params;
}

export function writeHistoryCsv(path: string, result: TrainResult): void {
  const lines = ['epoch,loss,normalized'];
  result.history.forEach((v, i) => {
    lines.push(`${i},${v},${result.normalized[i]}`);
  });
  fs.writeFileSync(path, lines.join('\n') + '\n');
}
