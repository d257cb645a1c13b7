/**
 * Problem bundles written by the solver CLI: measurement vectors become the
 * network input laid out on the detector grid (one channel per source), the
 * phantom becomes the target volume (one channel per z-slice).
 */

import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

import { readConfig, readVectorMM } from './mmio';

export interface BundleShapes {
  nx: number;
  ny: number;
  nz: number;
  srcX: number;
  srcY: number;
  detX: number;
  detY: number;
}

export interface TrainingPair {
  /** [detY, detX, nSources] measurement tensor */
  input: tf.Tensor3D;
  /** [ny, nx, nz] phantom tensor */
  target: tf.Tensor3D;
  /** raw phantom in the solver's linear voxel order (x fastest, then y, z) */
  xStar: Float64Array;
  shapes: BundleShapes;
  dir: string;
}

export function readShapes(dir: string): BundleShapes {
  const cfg = readConfig(path.join(dir, 'bundle.cfg'));
  const need = (key: string): number => {
    const raw = cfg.get(key);
    if (raw === undefined) throw new Error(`bundle.cfg is missing ${key}`);
    return Number(raw);
  };
  return {
    nx: need('grid.nx'), ny: need('grid.ny'), nz: need('grid.nz'),
    srcX: need('layout.sources_x'), srcY: need('layout.sources_y'),
    detX: need('layout.detectors_x'), detY: need('layout.detectors_y'),
  };
}

/** Reshape a measurement vector (source-major rows) to [detY, detX, nSrc]. */
export function measurementToTensor(b: ArrayLike<number>, s: BundleShapes): tf.Tensor3D {
  const nSrc = s.srcX * s.srcY;
  const nDet = s.detX * s.detY;
  if (b.length !== nSrc * nDet) {
    throw new Error(`measurement has length ${b.length}, expected ${nSrc * nDet}`);
  }
  const data = new Float32Array(nSrc * nDet);
  for (let src = 0; src < nSrc; src++) {
    for (let dy = 0; dy < s.detY; dy++) {
      for (let dx = 0; dx < s.detX; dx++) {
        data[(dy * s.detX + dx) * nSrc + src] = Number(b[src * nDet + dy * s.detX + dx]);
      }
    }
  }
  return tf.tensor3d(data, [s.detY, s.detX, nSrc]);
}

/** Reshape a linear-order voxel vector to [ny, nx, nz] (z as channels). */
export function volumeToTensor(x: ArrayLike<number>, s: BundleShapes): tf.Tensor3D {
  if (x.length !== s.nx * s.ny * s.nz) {
    throw new Error(`volume has length ${x.length}, expected ${s.nx * s.ny * s.nz}`);
  }
  const data = new Float32Array(x.length);
  for (let iz = 0; iz < s.nz; iz++) {
    for (let iy = 0; iy < s.ny; iy++) {
      for (let ix = 0; ix < s.nx; ix++) {
        data[(iy * s.nx + ix) * s.nz + iz] = Number(x[ix + s.nx * (iy + s.ny * iz)]);
      }
    }
  }
  return tf.tensor3d(data, [s.ny, s.nx, s.nz]);
}

/** Flatten a [ny, nx, nz] prediction back to the solver's voxel order. */
export function tensorToVolume(t: tf.Tensor3D, s: BundleShapes): Float64Array {
  const vals = t.dataSync();
  const out = new Float64Array(s.nx * s.ny * s.nz);
  for (let iz = 0; iz < s.nz; iz++) {
    for (let iy = 0; iy < s.ny; iy++) {
      for (let ix = 0; ix < s.nx; ix++) {
        out[ix + s.nx * (iy + s.ny * iz)] = vals[(iy * s.nx + ix) * s.nz + iz];
      }
    }
  }
  return out;
}

export function loadBundle(dir: string): TrainingPair {
  const shapes = readShapes(dir);
  const b = readVectorMM(path.join(dir, 'b_noisy.mtx'));
  const xStar = readVectorMM(path.join(dir, 'x_star.mtx'));
  return {
    input: measurementToTensor(b, shapes),
    target: volumeToTensor(xStar, shapes),
    xStar,
    shapes,
    dir,
  };
}

export function loadBundles(dirs: string[]): TrainingPair[] {
  if (dirs.length === 0) throw new Error('need at least one bundle');
  const pairs = dirs.map(loadBundle);
  const first = JSON.stringify(pairs[0].shapes);
  for (const p of pairs) {
    if (JSON.stringify(p.shapes) !== first) {
      throw new Error(`bundle ${p.dir} has mismatched shapes`);
    }
  }
  return pairs;
}
