/**
 * Minimal CLI: `train` fine-tunes on a manifest + cache and writes a
 * checkpoint; `export` loads a checkpoint and writes UEF + predictions.
 *
 *   node dist/main.js train  --manifest m.csv --cache cache --out run --arch resnet50
 *   node dist/main.js export --manifest m.csv --cache cache --checkpoint run/checkpoint \
 *                            --arch resnet50 --out exports
 */

import * as path from 'node:path';

import { loadTiles } from './images.js';
import { readManifest } from './manifest.js';
import { Architecture, loadModel } from './models.js';
import { defaultSpec, trainClassifier } from './train.js';
import { exportFeatures, exportPredictions } from './export.js';

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith('--') || argv[i + 1] === undefined) {
      throw new Error(`malformed arguments near ${argv[i]}`);
    }
    out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

function required(args: Map<string, string>, name: string): string {
  const v = args.get(name);
  if (v === undefined) throw new Error(`--${name} is required`);
  return v;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  const args = parseArgs(rest);
  const arch = (args.get('arch') ?? 'resnet50') as Architecture;
  const records = readManifest(required(args, 'manifest'));
  const images = loadTiles(records, required(args, 'cache'));
  const out = required(args, 'out');

  if (command === 'train') {
    const spec = defaultSpec({
      architecture: arch,
      seed: parseInt(args.get('seed') ?? '0', 10),
      maxEpochs: parseInt(args.get('epochs') ?? '100', 10),
    });
    const result = await trainClassifier(records, images, spec, out);
    console.log(`best validation accuracy ${result.bestValAcc.toFixed(4)}`);
    return 0;
  }
  if (command === 'export') {
    const model = await loadModel(required(args, 'checkpoint'));
    exportFeatures(model, records, images, arch, path.join(out, 'features.uef.csv'));
    exportPredictions(model, records, images, path.join(out, 'predictions.csv'));
    return 0;
  }
  console.error(`unknown command ${command}; expected train or export`);
  return 2;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(`error: ${err.message}`);
    process.exit(1);
  },
);
