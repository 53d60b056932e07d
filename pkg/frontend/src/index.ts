export { MANIFEST_FIELDS, cachePath, missingTiles, readManifest } from './manifest.js';
export type { SampleRecord } from './manifest.js';
export { loadTile, loadTiles } from './images.js';
export {
  FEATURES_LAYER,
  FEATURE_DIMS,
  N_CLASSES,
  buildClassifier,
  featureExtractor,
  loadModel,
  saveModel,
} from './models.js';
export type { Architecture } from './models.js';
export {
  balancedIndices,
  defaultSpec,
  learningRateAt,
  mulberry32,
  splitIndices,
  trainClassifier,
} from './train.js';
export type { EpochLog, TrainResult, TrainSpec } from './train.js';
export { exportFeatures, exportPredictions, fmt } from './export.js';
