/**
 * Training behavior on the shared toy dataset.  The bundles are produced by
 * the solver CLI (the cross-package file contract), so these tests need the
 * `wbipm` Python package on PATH; they skip cleanly when it is missing.
 */

import { execFileSync, spawnSync } from 'child_process';
import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { loadBundle, loadBundles } from '../src/bundle';
import { exportPrediction } from '../src/export';
import { buildModel, defaultConfig, disposeModel } from '../src/model';
import { loadCheckpoint, saveCheckpoint, trainModel } from '../src/train';

const havePython = spawnSync('python3', ['-c', 'import wbipm'], { timeout: 60000 })
  .status === 0;

const TOY_SEEDS = [1, 2, 3, 4, 5, 6];
let workDir = '';
let toyDirs: string[] = [];

function generateBundle(dir: string, seed: number): void {
  execFileSync('python3', [
    '-m', 'wbipm.cli', 'generate', '--out', dir,
    '--set', 'grid.nx=8', '--set', 'grid.ny=8', '--set', 'grid.nz=4',
    '--set', 'layout.sources_x=2', '--set', 'layout.sources_y=2',
    '--set', 'layout.detectors_x=4', '--set', 'layout.detectors_y=4',
    '--set', `seed=${seed}`,
  ], { stdio: 'pipe' });
}

beforeAll(() => {
  if (!havePython) return;
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), 'nn-warmbasis-'));
  toyDirs = TOY_SEEDS.map((s) => path.join(workDir, `b${s}`));
  toyDirs.forEach((dir, i) => generateBundle(dir, TOY_SEEDS[i]));
});

afterAll(() => {
  if (workDir) fs.rmSync(workDir, { recursive: true, force: true });
});

describe.skipIf(!havePython)('training on solver bundles', () => {
  it('overfits a single pair below 1% of the initial distance loss within 500 epochs', () => {
    const pair = loadBundle(toyDirs[0]);
    const res = trainModel([pair], {
      loss: 'distance', epochs: 500, seed: 3, stopBelowNormalized: 5e-3,
    });
    expect(res.history.length - 1).toBeLessThanOrEqual(500);
    expect(Math.min(...res.normalized)).toBeLessThan(0.01);
    disposeModel(res.params);
  });

  it('angle loss decays faster than distance loss on the toy dataset (reported)', () => {
    const pairs = loadBundles(toyDirs);
    const rows: Record<string, unknown>[] = [];
    const agg = { angleEnd: 0, distEnd: 0, angleMean: 0, distMean: 0 };
    const mean = (h: number[]) => h.reduce((a, b) => a + b, 0) / h.length;
    let perSeedWins = 0;
    for (const seed of [1, 2, 3]) {
      const curves: Record<string, number[]> = {};
      for (const loss of ['angle', 'distance'] as const) {
        const res = trainModel(pairs, {
          loss, epochs: 100, seed, baseChannels: 8, learningRate: 1e-2,
        });
        curves[loss] = res.normalized;
        disposeModel(res.params);
      }
      const row = {
        seed,
        angle_final: curves.angle[curves.angle.length - 1],
        distance_final: curves.distance[curves.distance.length - 1],
        angle_mean: mean(curves.angle),
        distance_mean: mean(curves.distance),
      };
      rows.push(row);
      if (row.angle_final < row.distance_final) perSeedWins += 1;
      agg.angleEnd += row.angle_final / 3;
      agg.distEnd += row.distance_final / 3;
      agg.angleMean += row.angle_mean / 3;
      agg.distMean += row.distance_mean / 3;
    }
    const report = { per_seed: rows, aggregate: agg, per_seed_wins: perSeedWins };
    const reportDir = path.resolve(__dirname, '../reports');
    fs.mkdirSync(reportDir, { recursive: true });
    fs.writeFileSync(path.join(reportDir, 'loss_comparison.json'),
                     JSON.stringify(report, null, 1));
    console.log('angle vs distance decay:', JSON.stringify(report.aggregate),
                `per-seed wins ${perSeedWins}/3`);
    if (perSeedWins < 3) {
      console.warn('per-seed ordering not 3/3; see reports/loss_comparison.json ' +
                   '(soft gate: init noise dominates at this scale)');
    }
    // the aggregate ordering is the hard gate; per-seed outcomes are reported
    expect(agg.angleEnd).toBeLessThan(agg.distEnd);
    expect(agg.angleMean).toBeLessThan(agg.distMean);
  });

  it('is reproducible for a fixed seed', () => {
    const pair = loadBundle(toyDirs[1]);
    const histories: number[][] = [];
    for (let run = 0; run < 2; run++) {
      const res = trainModel([pair], { loss: 'angle', epochs: 8, seed: 9 });
      histories.push(res.history);
      disposeModel(res.params);
    }
    expect(histories[0]).toEqual(histories[1]);
  });

  it('exports predictions the solver loads as unit warm bases', () => {
    const pair = loadBundle(toyDirs[2]);
    const cfg = defaultConfig(pair.input.shape, pair.target.shape, 5,
                              { baseChannels: 8 });
    const params = buildModel(cfg);
    const out = path.join(workDir, 'wb_pred.mtx');
    const raw = exportPrediction(params, pair, out);
    expect(raw.length).toBe(pair.xStar.length);

    const checks = execFileSync('python3', ['-c', `
import json, sys
import numpy as np
from wbipm.warmbasis import load_warm_basis
v = load_warm_basis(${JSON.stringify(out)}, expected_len=${raw.length})
print(json.dumps({"norm": float(np.linalg.norm(v))}))
`], { stdio: 'pipe' }).toString();
    const { norm } = JSON.parse(checks.trim().split('\n').pop()!);
    expect(Math.abs(norm - 1)).toBeLessThanOrEqual(1e-12);

    // same direction after normalization: cosine with the raw export is 1
    const rawNorm = Math.sqrt(raw.reduce((a, b) => a + b * b, 0));
    const loaded = execFileSync('python3', ['-c', `
import json
import numpy as np
from wbipm.warmbasis import load_warm_basis
v = load_warm_basis(${JSON.stringify(out)})
print(json.dumps(v.tolist()))
`], { stdio: 'pipe' }).toString();
    const vec: number[] = JSON.parse(loaded.trim().split('\n').pop()!);
    const cos = vec.reduce((acc, vi, i) => acc + vi * raw[i], 0) / rawNorm;
    expect(Math.abs(cos - 1)).toBeLessThanOrEqual(1e-7);
    disposeModel(params);
  });

  it('zero predictions are rejected by the solver loader', () => {
    const out = path.join(workDir, 'wb_zero.mtx');
    fs.writeFileSync(out, '%%MatrixMarket matrix array real general\n%\n4 1\n0\n0\n0\n0\n');
    const probe = spawnSync('python3', ['-c', `
from wbipm.warmbasis import load_warm_basis, WarmBasisZeroError
try:
    load_warm_basis(${JSON.stringify(out)})
except WarmBasisZeroError:
    print("REJECTED")
`], { timeout: 60000 });
    expect(probe.stdout.toString()).toContain('REJECTED');
  });

  it('checkpoints round-trip through JSON', () => {
    const pair = loadBundle(toyDirs[3]);
    const res = trainModel([pair], { loss: 'distance', epochs: 3, seed: 4 });
    const ckpt = path.join(workDir, 'model.json');
    saveCheckpoint(ckpt, res.params);
    const reloaded = loadCheckpoint(ckpt);
    const before = exportPrediction(res.params, pair, path.join(workDir, 'p1.mtx'));
    const after = exportPrediction(reloaded, pair, path.join(workDir, 'p2.mtx'));
    expect(Array.from(after)).toEqual(Array.from(before));
    disposeModel(res.params);
    disposeModel(reloaded);
  });
});
