/**
 * Reader for the toolkit's sample manifest CSV and its tile cache layout.
 * The bridge never touches the toolkit's internals — only these files.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

export interface SampleRecord {
  sampleId: string;
  city: string;
  classId: number;
  polygonId: string;
  lat: number;
  lng: number;
  zoom: number;
  px: number;
  coverage: number;
  split: string;
}

export const MANIFEST_FIELDS = [
  'sample_id', 'city', 'class_id', 'polygon_id',
  'lat', 'lng', 'zoom', 'px', 'coverage', 'split',
] as const;

/** Minimal CSV split; manifest fields never contain quotes or commas. */
function splitCsvLine(line: string): string[] {
  return line.split(',');
}

export function readManifest(manifestPath: string): SampleRecord[] {
  const text = fs.readFileSync(manifestPath, 'utf8').trim();
  const lines = text.split(/\r?\n/);
  const header = splitCsvLine(lines[0]);
  for (const field of MANIFEST_FIELDS) {
    if (!header.includes(field)) {
      throw new Error(`${manifestPath}: missing manifest column ${field}`);
    }
  }
  const col = (name: string) => header.indexOf(name);
  return lines.slice(1).map((line) => {
    const row = splitCsvLine(line);
    return {
      sampleId: row[col('sample_id')],
      city: row[col('city')],
      classId: parseInt(row[col('class_id')], 10),
      polygonId: row[col('polygon_id')],
      lat: parseFloat(row[col('lat')]),
      lng: parseFloat(row[col('lng')]),
      zoom: parseInt(row[col('zoom')], 10),
      px: parseInt(row[col('px')], 10),
      coverage: parseFloat(row[col('coverage')]),
      split: row[col('split')],
    };
  });
}

/** Mirror of the toolkit's cache scheme: {zoom}/{lat}_{lng}_{w}x{h}.png */
export function cachePath(record: SampleRecord, cacheDir: string): string {
  const name = `${record.lat.toFixed(6)}_${record.lng.toFixed(6)}_${record.px}x${record.px}.png`;
  return path.join(cacheDir, String(record.zoom), name);
}

export function missingTiles(records: SampleRecord[], cacheDir: string): string[] {
  return records
    .map((r) => cachePath(r, cacheDir))
    .filter((p) => !fs.existsSync(p));
}
