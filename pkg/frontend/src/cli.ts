/**
 * Command line:
 *   node dist/cli.js train --bundles d1,d2,... --loss angle --epochs 300 \
 *        --seed 1 --out model.json [--history hist.csv]
 *   node dist/cli.js export --model model.json --bundle dir --out wb.mtx
 */

import { loadBundle, loadBundles } from './bundle';
import { exportPrediction } from './export';
import { LossKind, loadCheckpoint, saveCheckpoint, trainModel, writeHistoryCsv } from './train';

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${argv[i]}`);
    }
    out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

function need(args: Map<string, string>, key: string): string {
  const v = args.get(key);
  if (v === undefined) throw new Error(`missing --${key}`);
  return v;
}

function cmdTrain(args: Map<string, string>): void {
  const dirs = need(args, 'bundles').split(',').filter((d) => d.length > 0);
  const loss = (args.get('loss') ?? 'angle') as LossKind;
  if (loss !== 'angle' && loss !== 'distance') {
    throw new Error(`unknown loss ${loss}`);
  }
  const result = trainModel(loadBundles(dirs), {
    loss,
    epochs: Number(args.get('epochs') ?? 300),
    seed: Number(args.get('seed') ?? 0),
    learningRate: args.has('lr') ? Number(args.get('lr')) : undefined,
    baseChannels: args.has('channels') ? Number(args.get('channels')) : undefined,
  });
  saveCheckpoint(need(args, 'out'), result.params);
  if (args.has('history')) writeHistoryCsv(args.get('history')!, result);
  const last = result.normalized[result.normalized.length - 1];
  console.log(`trained ${loss} loss for ${result.history.length - 1} epochs: ` +
              `final normalized loss ${last.toExponential(3)}`);
}

function cmdExport(args: Map<string, string>): void {
  const params = loadCheckpoint(need(args, 'model'));
  const pair = loadBundle(need(args, 'bundle'));
  exportPrediction(params, pair, need(args, 'out'));
  console.log(`warm basis written to ${args.get('out')}`);
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === 'train') cmdTrain(parseArgs(rest));
    else if (command === 'export') cmdExport(parseArgs(rest));
    else throw new Error(`usage: cli.js train|export ... (got ${command ?? 'nothing'})`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
}

if (require.main === module) {
  process.exitCode = main(process.argv.slice(2));
}
