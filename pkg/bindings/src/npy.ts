/**
 * Minimal NPY v1.0 codec for little-endian float32 volumes.
 *
 * Flat buffers use the toolkit's x-fastest linear order
 * (flat[x + nx*(y + ny*z)] = volume[x, y, z]); files written here carry
 * fortran_order=true so the buffer goes to disk verbatim, and the decoder
 * normalizes either storage order back to x-fastest.
 */

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export type Shape3 = [number, number, number];

export interface Volume3 {
  shape: Shape3;
  /** x-fastest flat buffer */
  data: Float32Array;
}

export function encodeNpy(data: Float32Array, shape: Shape3): Buffer {
  const n = shape[0] * shape[1] * shape[2];
  if (data.length !== n) {
    throw new Error(`buffer holds ${data.length} values, shape needs ${n}`);
  }
  const dict = `{'descr': '<f4', 'fortran_order': True, 'shape': (${shape[0]}, ${shape[1]}, ${shape[2]}), }`;
  const prefix = MAGIC.length + 2 + 2;
  const pad = 64 - ((prefix + dict.length + 1) % 64);
  const header = dict + " ".repeat(pad) + "\n";
  const head = Buffer.alloc(prefix + header.length);
  MAGIC.copy(head, 0);
  head[MAGIC.length] = 1;
  head[MAGIC.length + 1] = 0;
  head.writeUInt16LE(header.length, MAGIC.length + 2);
  head.write(header, prefix, "latin1");
  const payload = Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  return Buffer.concat([head, payload]);
}

export function decodeNpy(buf: Buffer): Volume3 {
  if (!buf.subarray(0, MAGIC.length).equals(MAGIC)) {
    throw new Error("not an NPY file");
  }
  const major = buf[MAGIC.length];
  let headerLen: number;
  let offset: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(MAGIC.length + 2);
    offset = MAGIC.length + 4;
  } else if (major === 2) {
    headerLen = buf.readUInt32LE(MAGIC.length + 2);
    offset = MAGIC.length + 6;
  } else {
    throw new Error(`unsupported NPY version ${major}`);
  }
  const header = buf.subarray(offset, offset + headerLen).toString("latin1");
  const descr = /['"]descr['"]\s*:\s*['"]([^'"]+)['"]/.exec(header)?.[1];
  if (descr !== "<f4") {
    throw new Error(`unsupported dtype ${descr}; the bindings speak <f4 only`);
  }
  const fortran = /['"]fortran_order['"]\s*:\s*(True|False)/.exec(header)?.[1] === "True";
  const shapeMatch = /['"]shape['"]\s*:\s*\(([^)]*)\)/.exec(header)?.[1];
  if (shapeMatch === undefined) {
    throw new Error("malformed NPY header: no shape");
  }
  const dims = shapeMatch.split(",").map((s) => s.trim()).filter((s) => s.length);
  if (dims.length !== 3) {
    throw new Error(`need a 3-D volume, file has ${dims.length} dims`);
  }
  const shape = dims.map(Number) as Shape3;
  const [nx, ny, nz] = shape;
  const n = nx * ny * nz;
  const start = offset + headerLen;
  if (buf.length < start + 4 * n) {
    throw new Error(`file truncated: needs ${4 * n} payload bytes`);
  }
  const raw = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    raw[i] = buf.readFloatLE(start + 4 * i);
  }
  if (fortran) {
    return { shape, data: raw };
  }
  // C order on disk (z fastest): permute to x-fastest
  const out = new Float32Array(n);
  let src = 0;
  for (let x = 0; x < nx; x++) {
    for (let y = 0; y < ny; y++) {
      for (let z = 0; z < nz; z++) {
        out[x + nx * (y + ny * z)] = raw[src++];
      }
    }
  }
  return { shape, data: out };
}
