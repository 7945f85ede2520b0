/**
 * Binary PPM (P6, maxval 255) decoding and nearest-neighbor presentation
 * math. Stimuli are served as PPM; browsers cannot render that natively, so
 * the client decodes to RGBA and paints a canvas. Display uses integer
 * upscaling only, so participants judge the true 64x64 content.
 */

export interface DecodedImage {
  width: number;
  height: number;
  /** RGBA, row-major, 4 bytes per pixel. */
  rgba: Uint8ClampedArray<ArrayBuffer>;
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);

export function decodePpm(bytes: Uint8Array): DecodedImage {
  if (bytes.length < 2 || bytes[0] !== 0x50 || bytes[1] !== 0x36) {
    throw new Error("not a binary PPM (P6) stream");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < bytes.length && WHITESPACE.has(bytes[pos])) pos++;
    if (bytes[pos] === 0x23) {
      // comment runs to end of line
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < bytes.length && !WHITESPACE.has(bytes[pos])) pos++;
    const token = String.fromCharCode(...bytes.subarray(start, pos));
    const value = Number.parseInt(token, 10);
    if (!Number.isFinite(value)) throw new Error(`bad PPM header token: ${token}`);
    fields.push(value);
  }
  pos += 1; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`unsupported PPM maxval ${maxval}`);
  const expected = width * height * 3;
  if (bytes.length - pos < expected) {
    throw new Error(`truncated PPM: need ${expected} pixel bytes`);
  }
  const rgba = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  for (let i = 0; i < width * height; i++) {
    rgba[i * 4] = bytes[pos + i * 3];
    rgba[i * 4 + 1] = bytes[pos + i * 3 + 1];
    rgba[i * 4 + 2] = bytes[pos + i * 3 + 2];
    rgba[i * 4 + 3] = 255;
  }
  return { width, height, rgba };
}

/** Largest integer upscale factor that fits the viewport (at least 1). */
export function integerScale(imageSize: number, viewport: number): number {
  return Math.max(1, Math.floor(viewport / imageSize));
}

/** Paint a decoded image onto a canvas at an integer scale, no smoothing. */
export function drawToCanvas(
  image: DecodedImage,
  canvas: HTMLCanvasElement,
  scale: number,
): void {
  if (!Number.isInteger(scale) || scale < 1) {
    throw new Error(`display scale must be a positive integer, got ${scale}`);
  }
  canvas.width = image.width * scale;
  canvas.height = image.height * scale;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas not available");
  const offscreen = document.createElement("canvas");
  offscreen.width = image.width;
  offscreen.height = image.height;
  const octx = offscreen.getContext("2d");
  if (!octx) throw new Error("2d canvas not available");
  octx.putImageData(new ImageData(image.rgba, image.width, image.height), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(offscreen, 0, 0, canvas.width, canvas.height);
}
