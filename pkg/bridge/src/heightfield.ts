// Compact binary heightfield ("RGHF"): magic, version u16, dims u32 x 2,
// resolution f64, then row-major f32 heights, all little-endian. The engine
// ships it base64-encoded inside HELLO so both sides walk identical ground.

export class HeightfieldError extends Error {}

const MAGIC = "RGHF";
const VERSION = 1;
const HEADER_BYTES = 4 + 2 + 4 + 4 + 8;

export class Heightfield {
  readonly nx: number;
  readonly ny: number;
  readonly resolution: number;
  readonly grid: Float32Array;
  readonly originX: number;
  readonly originY: number;

  constructor(nx: number, ny: number, resolution: number, grid: Float32Array, originX = 0, originY = 0) {
    this.nx = nx;
    this.ny = ny;
    this.resolution = resolution;
    this.grid = grid;
    this.originX = originX;
    this.originY = originY;
  }

  static decode(data: Buffer, originX = 0, originY = 0): Heightfield {
    if (data.length < HEADER_BYTES) throw new HeightfieldError("truncated heightfield header");
    if (data.subarray(0, 4).toString("ascii") !== MAGIC) throw new HeightfieldError("bad heightfield magic");
    const version = data.readUInt16LE(4);
    if (version !== VERSION) throw new HeightfieldError(`unsupported heightfield version ${version}`);
    const nx = data.readUInt32LE(6);
    const ny = data.readUInt32LE(10);
    const resolution = data.readDoubleLE(14);
    const expected = nx * ny * 4;
    const body = data.subarray(HEADER_BYTES, HEADER_BYTES + expected);
    if (body.length !== expected) throw new HeightfieldError("truncated heightfield payload");
    const grid = new Float32Array(expected / 4);
    for (let i = 0; i < grid.length; i++) {
      grid[i] = body.readFloatLE(i * 4);
    }
    return new Heightfield(nx, ny, resolution, grid, originX, originY);
  }

  static decodeBase64(encoded: string, originX = 0, originY = 0): Heightfield {
    return Heightfield.decode(Buffer.from(encoded, "base64"), originX, originY);
  }

  private at(ix: number, iy: number): number {
    return this.grid[ix * this.ny + iy];
  }

  /** Bilinear support height; queries clamp to the tile edges. */
  heightAt(x: number, y: number): number {
    const maxX = this.originX + (this.nx - 1) * this.resolution;
    const maxY = this.originY + (this.ny - 1) * this.resolution;
    const cx = Math.min(Math.max(x, this.originX), maxX);
    const cy = Math.min(Math.max(y, this.originY), maxY);
    const fx = (cx - this.originX) / this.resolution;
    const fy = (cy - this.originY) / this.resolution;
    const ix = Math.min(Math.floor(fx), Math.max(this.nx - 2, 0));
    const iy = Math.min(Math.floor(fy), Math.max(this.ny - 2, 0));
    const tx = fx - ix;
    const ty = fy - iy;
    const ix1 = Math.min(ix + 1, this.nx - 1);
    const iy1 = Math.min(iy + 1, this.ny - 1);
    const h00 = this.at(ix, iy);
    const h01 = this.at(ix, iy1);
    const h10 = this.at(ix1, iy);
    const h11 = this.at(ix1, iy1);
    return (1 - tx) * ((1 - ty) * h00 + ty * h01) + tx * ((1 - ty) * h10 + ty * h11);
  }
}

/** Encoder used by tests to build fixture tiles byte-for-byte. */
export function encodeHeightfield(nx: number, ny: number, resolution: number, heights: number[]): Buffer {
  if (heights.length !== nx * ny) throw new HeightfieldError("height count does not match dims");
  const out = Buffer.alloc(HEADER_BYTES + heights.length * 4);
  out.write(MAGIC, 0, "ascii");
  out.writeUInt16LE(VERSION, 4);
  out.writeUInt32LE(nx, 6);
  out.writeUInt32LE(ny, 10);
  out.writeDoubleLE(resolution, 14);
  heights.forEach((h, i) => out.writeFloatLE(h, HEADER_BYTES + i * 4));
  return out;
}
