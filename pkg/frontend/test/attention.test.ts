import * as tf from '@tensorflow/tfjs';
import { describe, expect, it } from 'vitest';

import { AttentionWeights, attentionBlock, attentionConfig, attentionScores } from '../src/attention';
import { gaussianSource } from '../src/model';

function randomWeights(channels: number, dk: number, seed: number): AttentionWeights {
  const gauss = gaussianSource(seed);
  const make = (cin: number, cout: number) => {
    const data = new Float32Array(cin * cout);
    for (let i = 0; i < data.length; i++) data[i] = gauss() * 0.3;
    return tf.variable(tf.tensor4d(data, [1, 1, cin, cout]));
  };
  return { wq: make(channels, dk), wk: make(channels, dk),
           wv: make(channels, channels), wo: make(channels, channels) };
}

function zeroWeights(channels: number, dk: number): AttentionWeights {
  return {
    wq: tf.variable(tf.zeros([1, 1, channels, dk])),
    wk: tf.variable(tf.zeros([1, 1, channels, dk])),
    wv: tf.variable(tf.zeros([1, 1, channels, channels])),
    wo: tf.variable(tf.zeros([1, 1, channels, channels])),
  };
}

describe('attention block', () => {
  it('is the identity when all projection weights are zero', () => {
    const f = tf.randomNormal([2, 4, 4, 6], 0, 1, 'float32', 7) as tf.Tensor4D;
    const out = attentionBlock(f, zeroWeights(6, 3), 3);
    const diff = tf.max(tf.abs(tf.sub(out, f))).dataSync()[0];
    expect(diff).toBe(0);
  });

  it('preserves the feature shape for random configs', () => {
    for (const [h, w, c, dk] of [[4, 4, 3, 2], [8, 5, 7, 4], [2, 6, 5, 5]]) {
      const f = tf.randomNormal([1, h, w, c], 0, 1, 'float32', h + w) as tf.Tensor4D;
      const out = attentionBlock(f, randomWeights(c, dk, 11), dk);
      expect(out.shape).toEqual([1, h, w, c]);
    }
  });

  it('softmax rows sum to one along the key dimension', () => {
    const f = tf.randomNormal([2, 4, 4, 6], 0, 1, 'float32', 3) as tf.Tensor4D;
    const scores = attentionScores(f, randomWeights(6, 4, 5), 4);
    expect(scores.shape).toEqual([2, 16, 16]);
    const sums = tf.sum(scores, -1).dataSync();
    for (const s of sums) expect(Math.abs(s - 1)).toBeLessThanOrEqual(1e-6);
  });

  it('config validates the key dimension', () => {
    expect(() => attentionConfig(8, 0)).toThrow(/dk/);
    expect(attentionConfig(8, 4).enabled).toBe(true);
  });
});
