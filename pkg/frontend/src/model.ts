/**
 * Attention U-Net sized for desk-scale bundles: a small convolutional
 * encoder, attention-gated skip connections, and a decoder that upsamples
 * past the measurement resolution to the voxel grid.
 *
 * Weights are created from a dedicated deterministic PRNG so identical
 * seeds give identical models on any machine.
 */

import * as tf from '@tensorflow/tfjs';

import { AttentionWeights, attentionBlock } from './attention';

export interface ModelConfig {
  inHeight: number;
  inWidth: number;
  inChannels: number;
  outHeight: number;
  outWidth: number;
  outChannels: number;
  baseChannels: number;
  stages: number;
  dk: number;
  attention: boolean;
  seed: number;
}

export interface ConvWeights {
  kernel: tf.Variable<tf.Rank.R4>;
  bias: tf.Variable<tf.Rank.R1>;
}

export interface ModelParams {
  cfg: ModelConfig;
  encoder: ConvWeights[][];
  bottleneck: ConvWeights[];
  attn: (AttentionWeights | null)[];
  decoder: ConvWeights[][];
  head: ConvWeights;
}

export function defaultConfig(
  inShape: [number, number, number],
  outShape: [number, number, number],
  seed: number,
  overrides: Partial<ModelConfig> = {},
): ModelConfig {
  const maxStages = Math.floor(Math.log2(Math.min(inShape[0], inShape[1])));
  const cfg: ModelConfig = {
    inHeight: inShape[0], inWidth: inShape[1], inChannels: inShape[2],
    outHeight: outShape[0], outWidth: outShape[1], outChannels: outShape[2],
    baseChannels: 16,
    stages: Math.max(1, Math.min(3, maxStages)),
    dk: 8,
    attention: true,
    seed,
    ...overrides,
  };
  if (cfg.outHeight % cfg.inHeight !== 0 || cfg.outWidth % cfg.inWidth !== 0) {
    throw new Error('output resolution must be an integer multiple of the input');
  }
  return cfg;
}

/** mulberry32 + Box-Muller: deterministic gaussian weight init. */
export function gaussianSource(seed: number): () => number {
  let state = seed >>> 0;
  const uniform = () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
  return () => {
    const u1 = Math.max(uniform(), 1e-12);
    const u2 = uniform();
    return Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
  };
}

function convInit(gauss: () => number, kh: number, kw: number,
                  cin: number, cout: number): ConvWeights {
  const scale = Math.sqrt(2 / (kh * kw * cin));
  const data = new Float32Array(kh * kw * cin * cout);
  for (let i = 0; i < data.length; i++) data[i] = gauss() * scale;
  return {
    kernel: tf.variable(tf.tensor4d(data, [kh, kw, cin, cout])),
    bias: tf.variable(tf.zeros([cout])),
  };
}

function attnInit(gauss: () => number, channels: number, dk: number): AttentionWeights {
  const make = (cin: number, cout: number) => {
    const scale = Math.sqrt(1 / cin);
    const data = new Float32Array(cin * cout);
    for (let i = 0; i < data.length; i++) data[i] = gauss() * scale;
    return tf.variable(tf.tensor4d(data, [1, 1, cin, cout]));
  };
  return {
    wq: make(channels, dk),
    wk: make(channels, dk),
    wv: make(channels, channels),
    wo: make(channels, channels),
  };
}

export function buildModel(cfg: ModelConfig): ModelParams {
  const gauss = gaussianSource(cfg.seed * 2654435761 + 12345);
  const widths: number[] = [];
  for (let s = 0; s < cfg.stages; s++) widths.push(cfg.baseChannels << s);

  const encoder: ConvWeights[][] = [];
  let cin = cfg.inChannels;
  for (const w of widths) {
    encoder.push([convInit(gauss, 3, 3, cin, w), convInit(gauss, 3, 3, w, w)]);
    cin = w;
  }
  const bottleWidth = cfg.baseChannels << cfg.stages;
  const bottleneck = [convInit(gauss, 3, 3, cin, bottleWidth),
                      convInit(gauss, 3, 3, bottleWidth, bottleWidth)];

  const attn: (AttentionWeights | null)[] = [];
  const decoder: ConvWeights[][] = [];
  let up = bottleWidth;
  for (let s = cfg.stages - 1; s >= 0; s--) {
    attn.push(cfg.attention ? attnInit(gauss, widths[s], cfg.dk) : null);
    decoder.push([convInit(gauss, 3, 3, up + widths[s], widths[s]),
                  convInit(gauss, 3, 3, widths[s], widths[s])]);
    up = widths[s];
  }
  // extra upsampling convs from the input resolution to the voxel grid
  const extra = Math.log2(cfg.outHeight / cfg.inHeight);
  for (let e = 0; e < extra; e++) {
    decoder.push([convInit(gauss, 3, 3, up, cfg.baseChannels),
                  convInit(gauss, 3, 3, cfg.baseChannels, cfg.baseChannels)]);
    up = cfg.baseChannels;
  }
  const head = convInit(gauss, 1, 1, up, cfg.outChannels);
  return { cfg, encoder, bottleneck, attn, decoder, head };
}

function convRelu(x: tf.Tensor4D, w: ConvWeights): tf.Tensor4D {
  return tf.relu(tf.add(tf.conv2d(x, w.kernel, 1, 'same'), w.bias)) as tf.Tensor4D;
}

function upsample2x(x: tf.Tensor4D): tf.Tensor4D {
  const [, h, w] = x.shape;
  return tf.image.resizeNearestNeighbor(x, [h * 2, w * 2]);
}

export function forward(params: ModelParams, x: tf.Tensor4D): tf.Tensor4D {
  return tf.tidy(() => {
    const { cfg } = params;
    const skips: tf.Tensor4D[] = [];
    let h = x;
    for (const stage of params.encoder) {
      for (const conv of stage) h = convRelu(h, conv);
      skips.push(h);
      h = tf.maxPool(h, 2, 2, 'same');
    }
    for (const conv of params.bottleneck) h = convRelu(h, conv);

    for (let s = 0; s < cfg.stages; s++) {
      const skipRaw = skips[cfg.stages - 1 - s];
      const gate = params.attn[s];
      const skip = gate ? attentionBlock(skipRaw, gate, cfg.dk) : skipRaw;
      h = upsample2x(h);
      h = tf.concat([h, skip], -1);
      for (const conv of params.decoder[s]) h = convRelu(h, conv);
    }
    for (let s = cfg.stages; s < params.decoder.length; s++) {
      h = upsample2x(h);
      for (const conv of params.decoder[s]) h = convRelu(h, conv);
    }
    // linear head; predictions are directions, signs are allowed
    return tf.add(tf.conv2d(h, params.head.kernel, 1, 'same'),
                  params.head.bias) as tf.Tensor4D;
  });
}

export function trainableVariables(params: ModelParams): tf.Variable[] {
  const vars: tf.Variable[] = [];
  const pushConv = (c: ConvWeights) => vars.push(c.kernel, c.bias);
  params.encoder.flat().forEach(pushConv);
  params.bottleneck.forEach(pushConv);
  for (const a of params.attn) {
    if (a) vars.push(a.wq, a.wk, a.wv, a.wo);
  }
  params.decoder.flat().forEach(pushConv);
  pushConv(params.head);
  return vars;
}

export function disposeModel(params: ModelParams): void {
  trainableVariables(params).forEach((v) => v.dispose());
}
