/** Minimal PNG codec.
 *
 * The encoder writes 8-bit grayscale or RGB images using stored (an
 * uncompressed zlib variant) deflate blocks, so the byte stream is a pure
 * function of the pixels: the mask the server receives is exactly the canvas
 * raster, and re-encoding the same raster reproduces the same file. The
 * decoder understands enough of the format to read the service's output
 * (8-bit gray, RGB, or RGBA, non-interlaced) without a DOM canvas, which
 * also lets tests pixel-diff results under node.
 */

export interface DecodedImage {
  width: number;
  height: number;
  /** 1 (gray), 3 (RGB) or 4 (RGBA). */
  channels: number;
  /** Row-major, channel-interleaved, 8 bits per sample. */
  data: Uint8Array;
}

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

// ---------------------------------------------------------------- checksums

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(data: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < data.length; i++) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

// ---------------------------------------------------------------- encoding

function chunk(type: string, body: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + body.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, body.length);
  for (let i = 0; i < 4; i++) {
    out[4 + i] = type.charCodeAt(i);
  }
  out.set(body, 8);
  view.setUint32(8 + body.length, crc32(out.subarray(4, 8 + body.length)));
  return out;
}

/** Wrap raw bytes in a zlib stream of stored deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks = Math.max(1, Math.ceil(raw.length / 65535));
  const out = new Uint8Array(2 + blocks * 5 + raw.length + 4);
  out[0] = 0x78;
  out[1] = 0x01;
  let pos = 2;
  for (let i = 0; i < blocks; i++) {
    const start = i * 65535;
    const piece = raw.subarray(start, Math.min(start + 65535, raw.length));
    out[pos++] = i === blocks - 1 ? 1 : 0;          // BFINAL, BTYPE=00
    out[pos++] = piece.length & 0xff;
    out[pos++] = piece.length >> 8;
    out[pos++] = ~piece.length & 0xff;
    out[pos++] = (~piece.length >> 8) & 0xff;
    out.set(piece, pos);
    pos += piece.length;
  }
  new DataView(out.buffer).setUint32(pos, adler32(raw));
  return out;
}

function encode(pixels: Uint8Array, width: number, height: number,
                channels: 1 | 3): Uint8Array {
  if (width <= 0 || height <= 0 || !Number.isInteger(width) ||
      !Number.isInteger(height)) {
    throw new Error(`bad dimensions ${width}x${height}`);
  }
  if (pixels.length !== width * height * channels) {
    throw new Error(`expected ${width * height * channels} samples, ` +
                    `got ${pixels.length}`);
  }
  const stride = width * channels;
  const raw = new Uint8Array((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    raw.set(pixels.subarray(y * stride, (y + 1) * stride),
            y * (stride + 1) + 1);                  // filter byte 0 per row
  }
  const ihdr = new Uint8Array(13);
  const view = new DataView(ihdr.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  ihdr[8] = 8;                                      // bit depth
  ihdr[9] = channels === 1 ? 0 : 2;                 // gray / truecolor
  const parts = [
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const p of parts) {
    out.set(p, pos);
    pos += p.length;
  }
  return out;
}

export function encodeGrayPng(gray: Uint8Array, width: number,
                              height: number): Uint8Array {
  return encode(gray, width, height, 1);
}

export function encodeRgbPng(rgb: Uint8Array, width: number,
                             height: number): Uint8Array {
  return encode(rgb, width, height, 3);
}

// ---------------------------------------------------------------- inflate

class BitReader {
  private pos = 0;
  private bit = 0;

  constructor(private readonly data: Uint8Array) {}

  readBit(): number {
    if (this.pos >= this.data.length) {
      throw new Error("deflate stream truncated");
    }
    const v = (this.data[this.pos] >> this.bit) & 1;
    if (++this.bit === 8) {
      this.bit = 0;
      this.pos++;
    }
    return v;
  }

  readBits(n: number): number {
    let v = 0;
    for (let i = 0; i < n; i++) {
      v |= this.readBit() << i;
    }
    return v;
  }

  alignByte(): void {
    if (this.bit !== 0) {
      this.bit = 0;
      this.pos++;
    }
  }

  readBytes(n: number): Uint8Array {
    this.alignByte();
    if (this.pos + n > this.data.length) {
      throw new Error("deflate stream truncated");
    }
    const out = this.data.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }
}

interface Huffman {
  counts: Int32Array;   // number of codes per bit length
  symbols: Int32Array;  // symbols sorted by (length, symbol)
}

function buildHuffman(lengths: number[]): Huffman {
  const maxLen = 15;
  const counts = new Int32Array(maxLen + 1);
  for (const len of lengths) {
    counts[len]++;
  }
  counts[0] = 0;
  const offsets = new Int32Array(maxLen + 2);
  for (let len = 0; len <= maxLen; len++) {
    offsets[len + 1] = offsets[len] + counts[len];
  }
  const symbols = new Int32Array(lengths.length);
  for (let sym = 0; sym < lengths.length; sym++) {
    if (lengths[sym] > 0) {
      symbols[offsets[lengths[sym]]++] = sym;
    }
  }
  return { counts, symbols };
}

function decodeSymbol(reader: BitReader, huff: Huffman): number {
  let code = 0;
  let first = 0;
  let index = 0;
  for (let len = 1; len <= 15; len++) {
    code |= reader.readBit();
    const count = huff.counts[len];
    if (code - first < count) {
      return huff.symbols[index + (code - first)];
    }
    index += count;
    first = (first + count) << 1;
    code <<= 1;
  }
  throw new Error("invalid Huffman code");
}

const LENGTH_BASE = [3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31,
                     35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258];
const LENGTH_EXTRA = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2,
                      3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0];
const DIST_BASE = [1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193,
                   257, 385, 513, 769, 1025, 1537, 2049, 3073, 4097, 6145,
                   8193, 12289, 16385, 24577];
const DIST_EXTRA = [0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6,
                    7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13];

const FIXED_LITERAL = buildHuffman(
  Array.from({ length: 288 }, (_, i) =>
    i < 144 ? 8 : i < 256 ? 9 : i < 280 ? 7 : 8));
const FIXED_DIST = buildHuffman(Array.from({ length: 30 }, () => 5));

class Output {
  data: Uint8Array;
  length = 0;

  constructor(hint: number) {
    this.data = new Uint8Array(Math.max(hint, 1024));
  }

  private grow(extra: number): void {
    if (this.length + extra <= this.data.length) {
      return;
    }
    const next = new Uint8Array(
      Math.max(this.data.length * 2, this.length + extra));
    next.set(this.data.subarray(0, this.length));
    this.data = next;
  }

  push(byte: number): void {
    this.grow(1);
    this.data[this.length++] = byte;
  }

  append(bytes: Uint8Array): void {
    this.grow(bytes.length);
    this.data.set(bytes, this.length);
    this.length += bytes.length;
  }

  copy(distance: number, length: number): void {
    if (distance > this.length) {
      throw new Error("deflate distance beyond output");
    }
    this.grow(length);
    let from = this.length - distance;
    for (let i = 0; i < length; i++) {
      this.data[this.length++] = this.data[from++];
    }
  }

  bytes(): Uint8Array {
    return this.data.subarray(0, this.length);
  }
}

const CODE_LENGTH_ORDER = [16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3,
                           13, 2, 14, 1, 15];

function readDynamicTables(reader: BitReader): [Huffman, Huffman] {
  const hlit = reader.readBits(5) + 257;
  const hdist = reader.readBits(5) + 1;
  const hclen = reader.readBits(4) + 4;
  const clLengths = new Array<number>(19).fill(0);
  for (let i = 0; i < hclen; i++) {
    clLengths[CODE_LENGTH_ORDER[i]] = reader.readBits(3);
  }
  const clHuff = buildHuffman(clLengths);
  const lengths = new Array<number>(hlit + hdist).fill(0);
  let i = 0;
  while (i < hlit + hdist) {
    const sym = decodeSymbol(reader, clHuff);
    if (sym < 16) {
      lengths[i++] = sym;
    } else if (sym === 16) {
      if (i === 0) {
        throw new Error("repeat with no previous length");
      }
      const prev = lengths[i - 1];
      for (let n = reader.readBits(2) + 3; n > 0; n--) {
        lengths[i++] = prev;
      }
    } else if (sym === 17) {
      i += reader.readBits(3) + 3;
    } else {
      i += reader.readBits(7) + 11;
    }
  }
  return [buildHuffman(lengths.slice(0, hlit)),
          buildHuffman(lengths.slice(hlit))];
}

/** Inflate a raw deflate stream. */
export function inflate(data: Uint8Array, sizeHint = 0): Uint8Array {
  const reader = new BitReader(data);
  const out = new Output(sizeHint);
  for (;;) {
    const final = reader.readBit();
    const type = reader.readBits(2);
    if (type === 0) {
      reader.alignByte();
      const len = reader.readBytes(2);
      const nlen = reader.readBytes(2);
      const n = len[0] | (len[1] << 8);
      if ((n ^ 0xffff) !== (nlen[0] | (nlen[1] << 8))) {
        throw new Error("stored block length mismatch");
      }
      out.append(reader.readBytes(n));
    } else if (type === 1 || type === 2) {
      const [lit, dist] = type === 1
        ? [FIXED_LITERAL, FIXED_DIST]
        : readDynamicTables(reader);
      for (;;) {
        const sym = decodeSymbol(reader, lit);
        if (sym < 256) {
          out.push(sym);
        } else if (sym === 256) {
          break;
        } else {
          const li = sym - 257;
          const length = LENGTH_BASE[li] + reader.readBits(LENGTH_EXTRA[li]);
          const di = decodeSymbol(reader, dist);
          const distance = DIST_BASE[di] + reader.readBits(DIST_EXTRA[di]);
          out.copy(distance, length);
        }
      }
    } else {
      throw new Error("reserved deflate block type");
    }
    if (final) {
      return out.bytes();
    }
  }
}

function zlibInflate(data: Uint8Array, sizeHint: number): Uint8Array {
  if (data.length < 6) {
    throw new Error("zlib stream too short");
  }
  if ((data[0] & 0x0f) !== 8) {
    throw new Error("unsupported zlib compression method");
  }
  if (data[1] & 0x20) {
    throw new Error("preset dictionaries are not supported");
  }
  const raw = inflate(data.subarray(2, data.length - 4), sizeHint);
  const view = new DataView(data.buffer, data.byteOffset + data.length - 4, 4);
  if (adler32(raw) !== view.getUint32(0)) {
    throw new Error("zlib checksum mismatch");
  }
  return raw;
}

// ---------------------------------------------------------------- decoding

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  return pa <= pb && pa <= pc ? a : pb <= pc ? b : c;
}

function unfilter(raw: Uint8Array, width: number, height: number,
                  channels: number): Uint8Array {
  const stride = width * channels;
  const out = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const o = y * stride;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? out[o + x - channels] : 0;
      const up = y > 0 ? out[o + x - stride] : 0;
      const upLeft = y > 0 && x >= channels ? out[o + x - stride - channels] : 0;
      let v = row[x];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) >> 1; break;
        case 4: v += paeth(left, up, upLeft); break;
        default: throw new Error(`unknown PNG filter ${filter}`);
      }
      out[o + x] = v & 0xff;
    }
  }
  return out;
}

export function decodePng(bytes: Uint8Array): DecodedImage {
  if (bytes.length < 8 || SIGNATURE.some((b, i) => bytes[i] !== b)) {
    throw new Error("not a PNG file");
  }
  let width = 0;
  let height = 0;
  let channels = 0;
  const idat: Uint8Array[] = [];
  let pos = 8;
  while (pos + 8 <= bytes.length) {
    const view = new DataView(bytes.buffer, bytes.byteOffset + pos, 8);
    const length = view.getUint32(0);
    const type = String.fromCharCode(bytes[pos + 4], bytes[pos + 5],
                                     bytes[pos + 6], bytes[pos + 7]);
    const body = bytes.subarray(pos + 8, pos + 8 + length);
    if (type === "IHDR") {
      const h = new DataView(body.buffer, body.byteOffset, 13);
      width = h.getUint32(0);
      height = h.getUint32(4);
      const depth = body[8];
      const color = body[9];
      if (depth !== 8) {
        throw new Error(`unsupported bit depth ${depth}`);
      }
      if (body[12] !== 0) {
        throw new Error("interlaced PNGs are not supported");
      }
      channels = color === 0 ? 1 : color === 2 ? 3 : color === 6 ? 4 : 0;
      if (channels === 0) {
        throw new Error(`unsupported color type ${color}`);
      }
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + length;
  }
  if (width === 0 || height === 0 || channels === 0 || idat.length === 0) {
    throw new Error("incomplete PNG");
  }
  const compressed = new Uint8Array(idat.reduce((n, p) => n + p.length, 0));
  let off = 0;
  for (const p of idat) {
    compressed.set(p, off);
    off += p.length;
  }
  const rawSize = (width * channels + 1) * height;
  const raw = zlibInflate(compressed, rawSize);
  if (raw.length !== rawSize) {
    throw new Error(`expected ${rawSize} filtered bytes, got ${raw.length}`);
  }
  return { width, height, channels,
           data: unfilter(raw, width, height, channels) };
}
