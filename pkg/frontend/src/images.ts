/** PNG tile loading: cache files -> normalized float tensors. */

import * as fs from 'node:fs';
import * as tf from '@tensorflow/tfjs';
import { PNG } from 'pngjs';

import { SampleRecord, cachePath, missingTiles } from './manifest.js';

/** Decode one cached tile to [h, w, 3] floats in [0, 1]. */
export function loadTile(record: SampleRecord, cacheDir: string): tf.Tensor3D {
  const png = PNG.sync.read(fs.readFileSync(cachePath(record, cacheDir)));
  const n = png.width * png.height;
  const rgb = new Float32Array(n * 3);
  for (let i = 0; i < n; i++) {
    rgb[i * 3] = png.data[i * 4] / 255;
    rgb[i * 3 + 1] = png.data[i * 4 + 1] / 255;
    rgb[i * 3 + 2] = png.data[i * 4 + 2] / 255;
  }
  return tf.tensor3d(rgb, [png.height, png.width, 3]);
}

/** Load every manifest tile, aborting with the full missing list first. */
export function loadTiles(records: SampleRecord[], cacheDir: string): tf.Tensor4D {
  const missing = missingTiles(records, cacheDir);
  if (missing.length > 0) {
    throw new Error(
      `${missing.length} tiles missing from cache:\n${missing.join('\n')}`,
    );
  }
  const tiles = records.map((r) => loadTile(r, cacheDir));
  const batch = tf.stack(tiles) as tf.Tensor4D;
  tiles.forEach((t) => t.dispose());
  return batch;
}
