/** Synthetic manifest + PNG cache fixtures for the bridge tests. */

import * as fs from 'node:fs';
import * as path from 'node:path';
import { PNG } from 'pngjs';

import { SampleRecord, cachePath } from '../src/manifest.js';
import { mulberry32 } from '../src/train.js';

const CLASS_COLORS: [number, number, number][] = [
  [235, 235, 150], [170, 170, 200], [20, 90, 30], [110, 200, 80],
  [120, 60, 50], [160, 110, 180], [230, 190, 180], [200, 120, 110],
  [70, 220, 160], [30, 110, 220],
];

export interface Fixture {
  manifestPath: string;
  cacheDir: string;
  records: SampleRecord[];
}

export function makeFixture(
  dir: string, nClasses: number, perClass: number, px: number, seed = 1,
): Fixture {
  const cacheDir = path.join(dir, 'cache');
  const rand = mulberry32(seed);
  const records: SampleRecord[] = [];
  const lines = ['sample_id,city,class_id,polygon_id,lat,lng,zoom,px,coverage,split'];

  let k = 0;
  for (let c = 0; c < nClasses; c++) {
    for (let i = 0; i < perClass; i++) {
      const rec: SampleRecord = {
        sampleId: `s${String(k).padStart(4, '0')}`,
        city: 'fixture',
        classId: c,
        polygonId: `p${c}-${i}`,
        lat: 45 + k * 1e-4,
        lng: 9,
        zoom: 17,
        px,
        coverage: 0.5,
        split: i < Math.round(perClass * 0.8) ? 'train' : 'validation',
      };
      records.push(rec);
      lines.push([
        rec.sampleId, rec.city, rec.classId, rec.polygonId,
        rec.lat.toFixed(6), rec.lng.toFixed(6), rec.zoom, rec.px,
        rec.coverage.toFixed(6), rec.split,
      ].join(','));

      const png = new PNG({ width: px, height: px });
      const [r, g, b] = CLASS_COLORS[c % CLASS_COLORS.length];
      for (let p = 0; p < px * px; p++) {
        const noise = () => Math.floor(rand() * 20) - 10;
        png.data[p * 4] = Math.min(255, Math.max(0, r + noise()));
        png.data[p * 4 + 1] = Math.min(255, Math.max(0, g + noise()));
        png.data[p * 4 + 2] = Math.min(255, Math.max(0, b + noise()));
        png.data[p * 4 + 3] = 255;
      }
      const file = cachePath(rec, cacheDir);
      fs.mkdirSync(path.dirname(file), { recursive: true });
      fs.writeFileSync(file, PNG.sync.write(png));
      k++;
    }
  }
  const manifestPath = path.join(dir, 'manifest.csv');
  fs.writeFileSync(manifestPath, lines.join('\n') + '\n');
  return { manifestPath, cacheDir, records };
}
