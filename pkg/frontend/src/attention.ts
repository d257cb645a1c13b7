/**
 * Residual self-attention over spatial positions:
 *
 *   out = F + Wo * softmax((Wq*F)(Wk*F)^T / sqrt(dk)) (Wv*F)
 *
 * where Wq, Wk, Wv, Wo are 1x1 convolutions and the softmax normalizes over
 * the key positions.  With all projection weights zero this is exactly the
 * identity, which the tests pin down.
 */

import * as tf from '@tensorflow/tfjs';

export interface AttentionBlockConfig {
  channels: number;
  dk: number;
  enabled: boolean;
}

export interface AttentionWeights {
  wq: tf.Variable<tf.Rank.R4>;
  wk: tf.Variable<tf.Rank.R4>;
  wv: tf.Variable<tf.Rank.R4>;
  wo: tf.Variable<tf.Rank.R4>;
}

export function attentionConfig(channels: number, dk: number, enabled = true): AttentionBlockConfig {
  if (dk < 1) throw new Error('key/query dimension dk must be >= 1');
  if (channels < 1) throw new Error('channel width must be >= 1');
  return { channels, dk, enabled };
}

function conv1x1(x: tf.Tensor4D, w: tf.Tensor4D): tf.Tensor4D {
  return tf.conv2d(x, w, 1, 'same');
}

/** Attention matrix: [batch, queries, keys], rows summing to one. */
export function attentionScores(f: tf.Tensor4D, w: AttentionWeights, dk: number): tf.Tensor3D {
  return tf.tidy(() => {
    const [b, h, wd] = f.shape;
    const q = conv1x1(f, w.wq).reshape([b, h * wd, dk]) as tf.Tensor3D;
    const k = conv1x1(f, w.wk).reshape([b, h * wd, dk]) as tf.Tensor3D;
    const logits = tf.div(tf.matMul(q, k, false, true), Math.sqrt(dk));
    return tf.softmax(logits, -1) as tf.Tensor3D;
  });
}

export function attentionBlock(f: tf.Tensor4D, w: AttentionWeights, dk: number): tf.Tensor4D {
  return tf.tidy(() => {
    const [b, h, wd, c] = f.shape;
    const scores = attentionScores(f, w, dk);
    const v = conv1x1(f, w.wv).reshape([b, h * wd, c]) as tf.Tensor3D;
    const mixed = tf.matMul(scores, v).reshape([b, h, wd, c]) as tf.Tensor4D;
    return tf.add(f, conv1x1(mixed, w.wo));
  });
}
