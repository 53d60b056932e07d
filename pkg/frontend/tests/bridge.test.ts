import { execFileSync } from 'node:child_process';
import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { afterAll, describe, expect, it } from 'vitest';

import { exportFeatures, exportPredictions, fmt } from '../src/export.js';
import { loadTiles } from '../src/images.js';
import { missingTiles, readManifest } from '../src/manifest.js';
import {
  FEATURE_DIMS,
  buildClassifier,
  featureExtractor,
  loadModel,
  saveModel,
} from '../src/models.js';
import {
  balancedIndices,
  defaultSpec,
  learningRateAt,
  mulberry32,
  splitIndices,
  trainClassifier,
} from '../src/train.js';
import { makeFixture } from './fixture.js';

const tmpRoot = fs.mkdtempSync(path.join(os.tmpdir(), 'bridge-'));
afterAll(() => fs.rmSync(tmpRoot, { recursive: true, force: true }));

function tmpDir(name: string): string {
  const dir = path.join(tmpRoot, name);
  fs.mkdirSync(dir, { recursive: true });
  return dir;
}

/** Run the toolkit's own readers over an export; throws on rejection. */
function validateWithPrimary(kind: 'uef' | 'predictions', file: string): string {
  const expr = kind === 'uef'
    ? `from urbanenv.features import read_uef; fm = read_uef(${JSON.stringify(file)}); print(fm.n, fm.d, fm.source)`
    : `from urbanenv.features import read_predictions; ids, t, p = read_predictions(${JSON.stringify(file)}); print(len(ids), p.shape[1])`;
  return execFileSync('python3', ['-c', expr], { encoding: 'utf8' }).trim();
}

describe('manifest and cache', () => {
  it('round-trips the manifest fields', () => {
    const fx = makeFixture(tmpDir('manifest'), 3, 4, 8);
    const records = readManifest(fx.manifestPath);
    expect(records).toHaveLength(12);
    expect(records[0].sampleId).toBe('s0000');
    expect(records[0].px).toBe(8);
    expect(records.filter((r) => r.split === 'validation')).toHaveLength(3);
    expect(missingTiles(records, fx.cacheDir)).toHaveLength(0);
  });

  it('reports missing tiles before loading', () => {
    const fx = makeFixture(tmpDir('missing'), 1, 2, 8);
    fs.rmSync(fx.cacheDir, { recursive: true });
    expect(() => loadTiles(fx.records, fx.cacheDir)).toThrow(/2 tiles missing/);
  });

  it('loads tiles as normalized float batches', () => {
    const fx = makeFixture(tmpDir('load'), 2, 3, 8);
    const batch = loadTiles(fx.records, fx.cacheDir);
    expect(batch.shape).toEqual([6, 8, 8, 3]);
    const max = batch.max().dataSync()[0];
    expect(max).toBeLessThanOrEqual(1.0);
    batch.dispose();
  });
});

describe('training schedule', () => {
  it('halves the learning rate every 10 epochs from 0.1', () => {
    const spec = defaultSpec();
    expect(learningRateAt(spec, 0)).toBeCloseTo(0.1, 12);
    expect(learningRateAt(spec, 9)).toBeCloseTo(0.1, 12);
    expect(learningRateAt(spec, 10)).toBeCloseTo(0.05, 12);
    expect(learningRateAt(spec, 20)).toBeCloseTo(0.025, 12);
  });

  it('spec defaults match the training protocol', () => {
    const spec = defaultSpec();
    expect(spec.maxEpochs).toBe(100);
    expect(spec.samplesPerEpoch).toBe(2000);
    expect(spec.earlyStopPatience).toBe(10);
    expect(spec.valFraction).toBeCloseTo(0.2, 12);
  });

  it('balanced draws equalize a 9:1 class skew', () => {
    const labels = [...Array(90).fill(0), ...Array(10).fill(1)];
    const draw = balancedIndices(labels, 10_000, mulberry32(3));
    const share1 = draw.filter((i) => labels[i] === 1).length / draw.length;
    expect(share1).toBeGreaterThan(0.45);
    expect(share1).toBeLessThan(0.55);
  });

  it('honors manifest split markers', () => {
    const fx = makeFixture(tmpDir('split'), 2, 10, 8);
    const { train, val } = splitIndices(fx.records, 0.2, mulberry32(0));
    expect(train).toHaveLength(16);
    expect(val).toHaveLength(4);
  });

  it('records the halved learning rate in the epoch log', async () => {
    const fx = makeFixture(tmpDir('lrlog'), 2, 10, 8);
    const images = loadTiles(fx.records, fx.cacheDir);
    const spec = defaultSpec({
      maxEpochs: 11, samplesPerEpoch: 32, batchSize: 16,
      earlyStopPatience: 100, seed: 1,
    });
    const result = await trainClassifier(fx.records, images, spec, tmpDir('lrlog-out'), 2);
    images.dispose();
    expect(result.log[9].lr).toBeCloseTo(0.1, 12);
    expect(result.log[10].lr).toBeCloseTo(0.05, 12);
    const logText = fs.readFileSync(
      path.join(tmpDir('lrlog-out'), 'training_log.csv'), 'utf8');
    expect(logText.split('\n')[0]).toBe('epoch,lr,loss,train_acc,val_acc');
    expect(logText).toContain('10,0.05,');
  }, 120_000);

  it('reaches >0.9 validation accuracy in <=5 epochs on 2 classes', async () => {
    const fx = makeFixture(tmpDir('twoclass'), 2, 25, 8);
    const images = loadTiles(fx.records, fx.cacheDir);
    const spec = defaultSpec({
      maxEpochs: 5, samplesPerEpoch: 128, batchSize: 32, seed: 2,
    });
    const result = await trainClassifier(fx.records, images, spec, tmpDir('twoclass-out'), 2);
    images.dispose();
    expect(result.log.length).toBeLessThanOrEqual(5);
    expect(result.bestValAcc).toBeGreaterThan(0.9);
  }, 120_000);
});

describe('checkpoints', () => {
  it('save/load reproduces predictions exactly', async () => {
    const model = buildClassifier('resnet50', 8, 2);
    const dir = tmpDir('ckpt');
    await saveModel(model, dir);
    const back = await loadModel(dir);
    const x = tf.randomUniform([3, 8, 8, 3], 0, 1, 'float32', 7);
    const a = (model.predict(x) as tf.Tensor2D).dataSync();
    const b = (back.predict(x) as tf.Tensor2D).dataSync();
    expect(Array.from(b)).toEqual(Array.from(a));
  });
});

describe('interchange exports', () => {
  it('resnet50 exports 2048 columns that pass the toolkit reader', () => {
    const fx = makeFixture(tmpDir('uef2048'), 3, 2, 8);
    const images = loadTiles(fx.records, fx.cacheDir);
    const model = buildClassifier('resnet50', 8);
    const out = path.join(tmpDir('uef2048'), 'features.uef.csv');
    exportFeatures(model, fx.records, images, 'resnet50', out);
    images.dispose();
    expect(validateWithPrimary('uef', out)).toBe('6 2048 resnet50-features');
  }, 120_000);

  it('vgg16 exports 4096 columns that pass the toolkit reader', () => {
    const fx = makeFixture(tmpDir('uef4096'), 2, 2, 8);
    const images = loadTiles(fx.records, fx.cacheDir);
    const model = buildClassifier('vgg16', 8);
    const out = path.join(tmpDir('uef4096'), 'features.uef.csv');
    exportFeatures(model, fx.records, images, 'vgg16', out);
    images.dispose();
    expect(validateWithPrimary('uef', out)).toBe('4 4096 vgg16-features');
  }, 120_000);

  it('feature dims table matches the architectures', () => {
    expect(FEATURE_DIMS.vgg16).toBe(4096);
    expect(FEATURE_DIMS.resnet50).toBe(2048);
    const extractor = featureExtractor(buildClassifier('resnet50', 8));
    expect(extractor.outputs[0].shape[1]).toBe(2048);
  });

  it('prediction rows sum to 1 within 1e-6 and pass the toolkit reader', () => {
    const fx = makeFixture(tmpDir('preds'), 10, 1, 8);
    const images = loadTiles(fx.records, fx.cacheDir);
    const model = buildClassifier('resnet50', 8);
    const out = path.join(tmpDir('preds'), 'predictions.csv');
    exportPredictions(model, fx.records, images, out);
    images.dispose();
    expect(validateWithPrimary('predictions', out)).toBe('10 10');
    const rows = fs.readFileSync(out, 'utf8').trim().split('\n').slice(1);
    for (const row of rows) {
      const ps = row.split(',').slice(2).map(Number);
      const sum = ps.reduce((a, b) => a + b, 0);
      expect(Math.abs(sum - 1)).toBeLessThan(1e-6);
    }
  }, 120_000);

  it('formats values at 9 significant digits', () => {
    expect(fmt(0.1234567891234)).toBe('0.123456789');
    expect(fmt(1)).toBe('1');
    expect(() => fmt(Number.NaN)).toThrow();
  });
});
