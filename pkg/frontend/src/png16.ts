/**
 * Minimal decoder for the service's mask files: single-channel 16-bit
 * grayscale PNGs where the pixel value IS the cluster label. Runs in the
 * browser and in Node (DecompressionStream), so the UI consumes the mask
 * endpoint exactly as served, with no extra backend routes.
 */

export interface LabelGrid {
  width: number;
  height: number;
  labels: Uint16Array; // row-major
}

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

async function inflate(data: Uint8Array): Promise<Uint8Array> {
  const stream = new Blob([data as BlobPart]).stream().pipeThrough(
    new DecompressionStream("deflate"),
  );
  return new Uint8Array(await new Response(stream).arrayBuffer());
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

export async function decodeMaskPng(buffer: ArrayBuffer): Promise<LabelGrid> {
  const bytes = new Uint8Array(buffer);
  for (let i = 0; i < SIGNATURE.length; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  const view = new DataView(buffer);

  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = -1;
  const idat: Uint8Array[] = [];

  let offset = 8;
  while (offset < bytes.length) {
    const length = view.getUint32(offset);
    const type = String.fromCharCode(
      bytes[offset + 4]!, bytes[offset + 5]!, bytes[offset + 6]!, bytes[offset + 7]!,
    );
    const dataStart = offset + 8;
    if (type === "IHDR") {
      width = view.getUint32(dataStart);
      height = view.getUint32(dataStart + 4);
      bitDepth = bytes[dataStart + 8]!;
      colorType = bytes[dataStart + 9]!;
      if (bytes[dataStart + 12] !== 0) throw new Error("interlaced PNG unsupported");
    } else if (type === "IDAT") {
      idat.push(bytes.subarray(dataStart, dataStart + length));
    } else if (type === "IEND") {
      break;
    }
    offset = dataStart + length + 4; // skip CRC
  }

  if (colorType !== 0 || bitDepth !== 16) {
    throw new Error(`expected 16-bit grayscale label map, got depth ${bitDepth} type ${colorType}`);
  }

  const compressed = new Uint8Array(idat.reduce((n, c) => n + c.length, 0));
  let pos = 0;
  for (const chunk of idat) {
    compressed.set(chunk, pos);
    pos += chunk.length;
  }
  const raw = await inflate(compressed);

  const bpp = 2; // bytes per pixel, one 16-bit sample
  const stride = width * bpp;
  const labels = new Uint16Array(width * height);
  const prior = new Uint8Array(stride);
  const current = new Uint8Array(stride);

  for (let y = 0; y < height; y++) {
    const rowStart = y * (stride + 1);
    const filter = raw[rowStart]!;
    for (let x = 0; x < stride; x++) {
      const rawByte = raw[rowStart + 1 + x]!;
      const left = x >= bpp ? current[x - bpp]! : 0;
      const up = prior[x]!;
      const upLeft = x >= bpp ? prior[x - bpp]! : 0;
      let value: number;
      switch (filter) {
        case 0: value = rawByte; break;
        case 1: value = rawByte + left; break;
        case 2: value = rawByte + up; break;
        case 3: value = rawByte + ((left + up) >> 1); break;
        case 4: value = rawByte + paeth(left, up, upLeft); break;
        default: throw new Error(`unknown PNG filter ${filter}`);
      }
      current[x] = value & 0xff;
    }
    for (let x = 0; x < width; x++) {
      labels[y * width + x] = (current[x * 2]! << 8) | current[x * 2 + 1]!;
    }
    prior.set(current);
  }

  return { width, height, labels };
}
