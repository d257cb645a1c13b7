/**
 * Training losses, kept numerically identical (at float32 precision) to the
 * solver package's metrics: see ../golden/loss_golden.json for the frozen
 * cross-package values.
 */

import * as tf from '@tensorflow/tfjs';

/** 1 - cos(angle) between prediction and truth; in [0, 2]. */
export function angleLoss(pred: ArrayLike<number>, truth: ArrayLike<number>): number {
  let dot = 0;
  let np = 0;
  let nt = 0;
  for (let i = 0; i < pred.length; i++) {
    dot += pred[i] * truth[i];
    np += pred[i] * pred[i];
    nt += truth[i] * truth[i];
  }
  if (np === 0 || nt === 0) {
    throw new Error('angle loss is undefined for zero vectors');
  }
  return 1 - dot / (Math.sqrt(np) * Math.sqrt(nt));
}

/** Squared Euclidean distance between prediction and truth. */
export function distanceLoss(pred: ArrayLike<number>, truth: ArrayLike<number>): number {
  let acc = 0;
  for (let i = 0; i < pred.length; i++) {
    const d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc;
}

/** Batched angle loss on tensors: mean over samples of 1 - cosine. */
export function angleLossTf(pred: tf.Tensor2D, truth: tf.Tensor2D): tf.Scalar {
  return tf.tidy(() => {
    const dot = tf.sum(tf.mul(pred, truth), 1);
    const norms = tf.mul(tf.norm(pred, 2, 1), tf.norm(truth, 2, 1));
    const cos = tf.div(dot, tf.add(norms, 1e-12));
    return tf.mean(tf.sub(1, cos)) as tf.Scalar;
  });
}

/** Batched distance loss on tensors: mean over samples of the squared norm. */
export function distanceLossTf(pred: tf.Tensor2D, truth: tf.Tensor2D): tf.Scalar {
  return tf.tidy(() =>
    tf.mean(tf.sum(tf.square(tf.sub(pred, truth)), 1)) as tf.Scalar);
}
