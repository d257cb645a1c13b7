import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';
import { describe, expect, it } from 'vitest';

import { angleLoss, angleLossTf, distanceLoss, distanceLossTf } from '../src/losses';

const GOLDEN = path.resolve(__dirname, '../../golden/loss_golden.json');

interface GoldenCase {
  pred: number[];
  truth: number[];
  angle_loss_f32: number;
  distance_loss_f32: number;
}

describe('losses', () => {
  it('match the solver package golden values bitwise at float32', () => {
    const cases: GoldenCase[] = JSON.parse(fs.readFileSync(GOLDEN, 'utf8')).cases;
    expect(cases.length).toBeGreaterThanOrEqual(16);
    for (const c of cases) {
      expect(Object.is(Math.fround(angleLoss(c.pred, c.truth)), c.angle_loss_f32))
        .toBe(true);
      expect(Object.is(Math.fround(distanceLoss(c.pred, c.truth)), c.distance_loss_f32))
        .toBe(true);
    }
  });

  it('angle loss stays in [0, 2] and rejects zero vectors', () => {
    const t = [1, 2, 2];
    expect(angleLoss(t, t)).toBe(0);
    expect(angleLoss([-1, -2, -2], t)).toBeCloseTo(2, 12);
    expect(angleLoss([2, -1, 0], t)).toBeCloseTo(1, 12);
    for (let i = 0; i < 100; i++) {
      const a = Array.from({ length: 5 }, () => Math.random() - 0.5);
      const b = Array.from({ length: 5 }, () => Math.random() - 0.5);
      const v = angleLoss(a, b);
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(2);
    }
    expect(() => angleLoss([0, 0, 0], t)).toThrow(/zero/);
  });

  it('tensor losses agree with the scalar reference', () => {
    const pred = [0.5, -1.25, 2.0, 0.125];
    const truth = [1.5, 0.25, -0.75, 2.5];
    const pt = tf.tensor2d([pred]);
    const tt = tf.tensor2d([truth]);
    expect(angleLossTf(pt, tt).dataSync()[0]).toBeCloseTo(angleLoss(pred, truth), 5);
    expect(distanceLossTf(pt, tt).dataSync()[0]).toBeCloseTo(distanceLoss(pred, truth), 4);
  });
});
