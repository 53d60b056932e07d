/**
 * Fine-tuning loop: balanced minibatches, step-decay learning rate
 * (halved every 10 epochs from 0.1), 80/20 split, early stopping after
 * 10 stagnant epochs. Writes a per-epoch CSV log next to the checkpoint.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';

import { SampleRecord } from './manifest.js';
import { Architecture, buildClassifier, saveModel } from './models.js';

export interface TrainSpec {
  architecture: Architecture;
  initialLr: number;        // 0.1
  halveEveryEpochs: number; // 10
  maxEpochs: number;        // 100
  samplesPerEpoch: number;  // 2000
  earlyStopPatience: number; // 10 stagnant epochs
  valFraction: number;      // 0.2
  batchSize: number;
  seed: number;
}

export function defaultSpec(overrides: Partial<TrainSpec> = {}): TrainSpec {
  return {
    architecture: 'resnet50',
    initialLr: 0.1,
    halveEveryEpochs: 10,
    maxEpochs: 100,
    samplesPerEpoch: 2000,
    earlyStopPatience: 10,
    valFraction: 0.2,
    batchSize: 32,
    seed: 0,
    ...overrides,
  };
}

export function learningRateAt(spec: TrainSpec, epoch: number): number {
  return spec.initialLr * Math.pow(0.5, Math.floor(epoch / spec.halveEveryEpochs));
}

/** Small deterministic PRNG so epochs replay identically for a seed. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Class-rebalanced draw with replacement: weight ∝ 1/count(class). */
export function balancedIndices(
  labels: number[], n: number, rand: () => number,
): number[] {
  const byClass = new Map<number, number[]>();
  labels.forEach((c, i) => {
    const bucket = byClass.get(c) ?? [];
    bucket.push(i);
    byClass.set(c, bucket);
  });
  const classes = [...byClass.keys()].sort((a, b) => a - b);
  const out: number[] = [];
  for (let k = 0; k < n; k++) {
    const cls = classes[Math.floor(rand() * classes.length)];
    const bucket = byClass.get(cls)!;
    out.push(bucket[Math.floor(rand() * bucket.length)]);
  }
  return out;
}

/** 80/20 by manifest split when present, else seeded shuffle. */
export function splitIndices(
  records: SampleRecord[], valFraction: number, rand: () => number,
): { train: number[]; val: number[] } {
  const train: number[] = [];
  const val: number[] = [];
  const marked = records.some((r) => r.split === 'validation');
  if (marked) {
    records.forEach((r, i) => (r.split === 'validation' ? val : train).push(i));
    return { train, val };
  }
  const order = records.map((_, i) => i);
  for (let i = order.length - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [order[i], order[j]] = [order[j], order[i]];
  }
  const nVal = Math.round(valFraction * order.length);
  return { train: order.slice(nVal), val: order.slice(0, nVal) };
}

export interface EpochLog {
  epoch: number;
  lr: number;
  loss: number;
  trainAcc: number;
  valAcc: number;
}

export interface TrainResult {
  model: tf.LayersModel;
  log: EpochLog[];
  bestValAcc: number;
}

function accuracy(model: tf.LayersModel, xs: tf.Tensor4D, labels: number[]): number {
  return tf.tidy(() => {
    const pred = (model.predict(xs) as tf.Tensor2D).argMax(1).dataSync();
    let hit = 0;
    labels.forEach((c, i) => { if (pred[i] === c) hit++; });
    return hit / labels.length;
  });
}

export async function trainClassifier(
  records: SampleRecord[],
  images: tf.Tensor4D,
  spec: TrainSpec,
  outDir: string,
  nClasses?: number,
): Promise<TrainResult> {
  const labels = records.map((r) => r.classId);
  const classCount = nClasses ?? Math.max(...labels) + 1;
  const px = images.shape[1];
  const model = buildClassifier(spec.architecture, px, classCount);

  const rand = mulberry32(spec.seed);
  const { train, val } = splitIndices(records, spec.valFraction, rand);
  if (train.length === 0 || val.length === 0) {
    throw new Error('both splits must be non-empty');
  }
  const trainLabels = train.map((i) => labels[i]);
  const valXs = tf.gather(images, val) as tf.Tensor4D;
  const valLabels = val.map((i) => labels[i]);

  const log: EpochLog[] = [];
  let bestValAcc = -1;
  let stagnant = 0;
  let currentLr = -1;

  for (let epoch = 0; epoch < spec.maxEpochs; epoch++) {
    const lr = learningRateAt(spec, epoch);
    if (lr !== currentLr) {
      model.compile({
        optimizer: tf.train.sgd(lr),
        loss: 'sparseCategoricalCrossentropy',
        metrics: ['accuracy'],
      });
      currentLr = lr;
    }

    const draw = balancedIndices(trainLabels, spec.samplesPerEpoch, rand)
      .map((i) => train[i]);
    const xs = tf.gather(images, draw) as tf.Tensor4D;
    const ys = tf.tensor1d(draw.map((i) => labels[i]), 'float32');
    const history = await model.fit(xs, ys, {
      batchSize: spec.batchSize,
      epochs: 1,
      shuffle: false,
      verbose: 0,
    });
    xs.dispose();
    ys.dispose();

    const valAcc = accuracy(model, valXs, valLabels);
    log.push({
      epoch,
      lr,
      loss: history.history.loss[0] as number,
      trainAcc: history.history.acc[0] as number,
      valAcc,
    });

    if (valAcc > bestValAcc) {
      bestValAcc = valAcc;
      stagnant = 0;
    } else {
      stagnant++;
      if (stagnant >= spec.earlyStopPatience) break;
    }
  }
  valXs.dispose();

  fs.mkdirSync(outDir, { recursive: true });
  await saveModel(model, path.join(outDir, 'checkpoint'));
  const header = 'epoch,lr,loss,train_acc,val_acc\n';
  const rows = log.map((e) =>
    `${e.epoch},${e.lr},${e.loss},${e.trainAcc},${e.valAcc}`).join('\n');
  fs.writeFileSync(path.join(outDir, 'training_log.csv'), header + rows + '\n');

  return { model, log, bestValAcc };
}
