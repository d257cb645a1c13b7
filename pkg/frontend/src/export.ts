/**
 * Export a network prediction as a Matrix Market warm-basis vector in the
 * solver's linear voxel order (the solver normalizes it on load).
 */

import { TrainingPair, tensorToVolume } from './bundle';
import { writeVectorMM } from './mmio';
import { ModelParams } from './model';
import { predict } from './train';

export function exportPrediction(params: ModelParams, pair: TrainingPair,
                                 outPath: string): Float64Array {
  const out = predict(params, pair.input);
  const volume = tensorToVolume(out, pair.shapes);
  out.dispose();
  writeVectorMM(outPath, volume);
  return volume;
}
