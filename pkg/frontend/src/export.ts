/**
 * Interchange exports: UEF codes and predictions CSV, in exactly the
 * formats the toolkit's readers validate. Values carry 9 significant
 * digits; prediction rows are renormalized before formatting so they sum
 * to 1 within 1e-6 after parsing.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';

import { SampleRecord } from './manifest.js';
import { Architecture, FEATURE_DIMS, featureExtractor, N_CLASSES } from './models.js';

/** %.9g equivalent: shortest form of the 9-significant-digit rounding. */
export function fmt(v: number): string {
  if (!Number.isFinite(v)) {
    throw new Error(`non-finite value ${v} in export`);
  }
  return String(parseFloat(v.toPrecision(9)));
}

export function exportFeatures(
  model: tf.LayersModel,
  records: SampleRecord[],
  images: tf.Tensor4D,
  arch: Architecture,
  outPath: string,
  batchSize = 16,
): void {
  const extractor = featureExtractor(model);
  const dim = FEATURE_DIMS[arch];
  const lines: string[] = [];
  lines.push(`# source,${arch}-${'features'}`);
  const header = ['id', 'city', 'class_id', 'lat', 'lng', 'split'];
  for (let i = 0; i < dim; i++) header.push(`f${i}`);
  lines.push(header.join(','));

  for (let start = 0; start < records.length; start += batchSize) {
    const stop = Math.min(start + batchSize, records.length);
    const batch = tf.tidy(() => {
      const slice = tf.slice(images, [start, 0, 0, 0], [stop - start, -1, -1, -1]);
      return extractor.predict(slice) as tf.Tensor2D;
    });
    const values = batch.dataSync();
    batch.dispose();
    if (values.length !== (stop - start) * dim) {
      throw new Error(`feature layer produced ${values.length / (stop - start)} dims, expected ${dim}`);
    }
    for (let r = start; r < stop; r++) {
      const rec = records[r];
      const row = [rec.sampleId, rec.city, String(rec.classId),
                   fmt(rec.lat), fmt(rec.lng), rec.split];
      const base = (r - start) * dim;
      for (let i = 0; i < dim; i++) row.push(fmt(values[base + i]));
      lines.push(row.join(','));
    }
  }
  fs.mkdirSync(path.dirname(outPath), { recursive: true });
  fs.writeFileSync(outPath, lines.join('\n') + '\n');
}

export function exportPredictions(
  model: tf.LayersModel,
  records: SampleRecord[],
  images: tf.Tensor4D,
  outPath: string,
): void {
  const probsT = tf.tidy(() => model.predict(images) as tf.Tensor2D);
  const nClasses = probsT.shape[1];
  if (nClasses !== N_CLASSES) {
    probsT.dispose();
    throw new Error(`model emits ${nClasses} classes, interchange requires ${N_CLASSES}`);
  }
  const probs = probsT.dataSync();
  probsT.dispose();

  const lines: string[] = [];
  const header = ['id', 'true_class'];
  for (let i = 0; i < N_CLASSES; i++) header.push(`p${i}`);
  lines.push(header.join(','));
  records.forEach((rec, r) => {
    const base = r * N_CLASSES;
    let sum = 0;
    for (let i = 0; i < N_CLASSES; i++) sum += probs[base + i];
    const row = [rec.sampleId, String(rec.classId)];
    for (let i = 0; i < N_CLASSES; i++) row.push(fmt(probs[base + i] / sum));
    lines.push(row.join(','));
  });
  fs.mkdirSync(path.dirname(outPath), { recursive: true });
  fs.writeFileSync(outPath, lines.join('\n') + '\n');
}
