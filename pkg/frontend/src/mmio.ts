/**
 * Matrix Market array I/O and the flat `key = value` config dialect, the
 * file contracts shared with the solver package.
 */

import * as fs from 'fs';

export class MmioError extends Error {}

/** Read a dense Matrix Market array vector (n x 1 or 1 x n). */
export function readVectorMM(path: string): Float64Array {
  let text: string;
  try {
    text = fs.readFileSync(path, 'utf8');
  } catch (err) {
    throw new MmioError(`cannot read ${path}: ${err}`);
  }
  const lines = text.split('\n');
  const header = lines[0]?.trim().toLowerCase() ?? '';
  if (!header.startsWith('%%matrixmarket matrix array real')) {
    throw new MmioError(`${path}: expected a real Matrix Market array header`);
  }
  let i = 1;
  while (i < lines.length && lines[i].trim().startsWith('%')) i++;
  const dims = lines[i]?.trim().split(/\s+/).map(Number) ?? [];
  if (dims.length !== 2 || dims.some((d) => !Number.isInteger(d) || d < 1)) {
    throw new MmioError(`${path}: bad dimension line`);
  }
  const [rows, cols] = dims;
  if (rows !== 1 && cols !== 1) {
    throw new MmioError(`${path}: expected a vector, got ${rows} x ${cols}`);
  }
  const n = rows * cols;
  const out = new Float64Array(n);
  let count = 0;
  for (i = i + 1; i < lines.length; i++) {
    const t = lines[i].trim();
    if (!t) continue;
    const v = Number(t);
    if (!Number.isFinite(v)) throw new MmioError(`${path}: bad value ${t}`);
    if (count >= n) throw new MmioError(`${path}: too many values`);
    out[count++] = v;
  }
  if (count !== n) throw new MmioError(`${path}: expected ${n} values, got ${count}`);
  return out;
}

/** Write a vector as an n x 1 Matrix Market array with full double precision. */
export function writeVectorMM(path: string, data: ArrayLike<number>): void {
  const lines = ['%%MatrixMarket matrix array real general', '%', `${data.length} 1`];
  for (let i = 0; i < data.length; i++) {
    lines.push(Number(data[i]).toExponential(16));
  }
  fs.writeFileSync(path, lines.join('\n') + '\n');
}

/** Parse flat `key = value` text (comments with #; no include support needed
 * for bundle metadata, which the solver always writes flattened). */
export function parseConfig(text: string): Map<string, string> {
  const out = new Map<string, string>();
  for (const raw of text.split('\n')) {
    const line = raw.split('#', 1)[0].trim();
    if (!line) continue;
    const eq = line.indexOf('=');
    if (eq < 0) throw new MmioError(`expected 'key = value', got: ${raw}`);
    out.set(line.slice(0, eq).trim(), line.slice(eq + 1).trim());
  }
  return out;
}

export function readConfig(path: string): Map<string, string> {
  return parseConfig(fs.readFileSync(path, 'utf8'));
}
