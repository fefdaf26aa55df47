/**
 * Run-length codec for binary masks.
 *
 * Wire format shared with the review service: runs of set pixels over the
 * row-major flattened image, each run an [start, length] pair.  Runs must
 * be sorted, non-overlapping and non-adjacent (adjacent runs would encode
 * the same mask two ways, so the canonical form forbids them).
 */

export interface RlePayload {
  width: number;
  height: number;
  runs: Array<[number, number]>;
}

export class RleError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'RleError';
  }
}

function checkDims(width: number, height: number): void {
  if (!Number.isInteger(width) || !Number.isInteger(height)
      || width < 1 || height < 1) {
    throw new RleError(`invalid dimensions ${width}x${height}`);
  }
}

/**
 * Decode an RLE payload to a flat Uint8Array of 0/1 values,
 * validating every invariant of the canonical form.
 */
export function decodeRle(payload: RlePayload): Uint8Array {
  checkDims(payload.width, payload.height);
  if (!Array.isArray(payload.runs)) {
    throw new RleError('runs must be an array');
  }
  const total = payload.width * payload.height;
  const bits = new Uint8Array(total);
  let prevEnd = -2;  // allows a run starting at 0
  for (const run of payload.runs) {
    if (!Array.isArray(run) || run.length !== 2
        || !Number.isInteger(run[0]) || !Number.isInteger(run[1])) {
      throw new RleError('each run must be an [start, length] integer pair');
    }
    const [start, length] = run;
    if (length < 1 || start < 0 || start + length > total) {
      throw new RleError(`run [${start}, ${length}] out of bounds`);
    }
    if (start <= prevEnd) {
      throw new RleError('runs must be sorted, non-overlapping, non-adjacent');
    }
    bits.fill(1, start, start + length);
    prevEnd = start + length;
  }
  return bits;
}

/**
 * Encode a flat 0/1 mask as canonical RLE.  Inverse of decodeRle:
 * decode(encode(bits)) reproduces bits exactly.
 */
export function encodeRle(bits: Uint8Array, width: number,
                          height: number): RlePayload {
  checkDims(width, height);
  if (bits.length !== width * height) {
    throw new RleError(
      `mask length ${bits.length} does not match ${width}x${height}`);
  }
  const runs: Array<[number, number]> = [];
  let start = -1;
  for (let i = 0; i < bits.length; i++) {
    if (bits[i]) {
      if (start < 0) start = i;
    } else if (start >= 0) {
      runs.push([start, i - start]);
      start = -1;
    }
  }
  if (start >= 0) {
    runs.push([start, bits.length - start]);
  }
  return { width, height, runs };
}

/** Number of set pixels in a decoded mask. */
export function countSet(bits: Uint8Array): number {
  let n = 0;
  for (let i = 0; i < bits.length; i++) {
    if (bits[i]) n++;
  }
  return n;
}
