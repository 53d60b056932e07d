/**
 * Reduced convolutional backbones. Each architecture name pins the code
 * dimensionality of its namesake's feature layer (vgg16 -> 4096,
 * resnet50 -> 2048); the stacks themselves are small enough to fine-tune
 * on CPU. The penultimate dense layer is named "features" and is the
 * layer the exporters read.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';

export const N_CLASSES = 10;

export type Architecture = 'vgg16' | 'resnet50';

export const FEATURE_DIMS: Record<Architecture, number> = {
  vgg16: 4096,
  resnet50: 2048,
};

export const FEATURES_LAYER = 'features';

export function buildClassifier(
  arch: Architecture,
  inputPx: number,
  nClasses: number = N_CLASSES,
): tf.LayersModel {
  const dim = FEATURE_DIMS[arch];
  if (dim === undefined) {
    throw new Error(`unknown architecture ${arch}`);
  }
  const model = tf.sequential();
  model.add(tf.layers.conv2d({
    inputShape: [inputPx, inputPx, 3],
    filters: 16, kernelSize: 3, strides: 2, activation: 'relu', padding: 'same',
  }));
  model.add(tf.layers.conv2d({
    filters: 32, kernelSize: 3, strides: 2, activation: 'relu', padding: 'same',
  }));
  model.add(tf.layers.conv2d({
    filters: 64, kernelSize: 3, strides: 2, activation: 'relu', padding: 'same',
  }));
  model.add(tf.layers.globalAveragePooling2d({}));
  model.add(tf.layers.dense({ units: dim, activation: 'relu', name: FEATURES_LAYER }));
  model.add(tf.layers.dense({ units: nClasses, activation: 'softmax', name: 'logits' }));
  return model;
}

/** Submodel from input to the named feature layer. */
export function featureExtractor(model: tf.LayersModel): tf.LayersModel {
  const layer = model.getLayer(FEATURES_LAYER);
  return tf.model({ inputs: model.inputs, outputs: layer.output as tf.SymbolicTensor });
}

// --- checkpoint I/O (plain files; no tfjs-node binding required) -------------

export async function saveModel(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  await model.save(tf.io.withSaveHandler(async (artifacts) => {
    const { weightData, ...rest } = artifacts;
    const weights = Buffer.from(weightData as ArrayBuffer);
    fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(rest));
    fs.writeFileSync(path.join(dir, 'weights.bin'), weights);
    return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } };
  }));
}

export async function loadModel(dir: string): Promise<tf.LayersModel> {
  const rest = JSON.parse(fs.readFileSync(path.join(dir, 'model.json'), 'utf8'));
  const weights = fs.readFileSync(path.join(dir, 'weights.bin'));
  const weightData = weights.buffer.slice(
    weights.byteOffset, weights.byteOffset + weights.byteLength,
  );
  return tf.loadLayersModel(tf.io.fromMemory({ ...rest, weightData }));
}
