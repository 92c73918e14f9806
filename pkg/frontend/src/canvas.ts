import type { Bbox } from "./types.js";

export function drawBackground(
  ctx: CanvasRenderingContext2D,
  image: CanvasImageSource,
): void {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  ctx.drawImage(image, 0, 0, ctx.canvas.width, ctx.canvas.height);
}

export function drawBboxOverlay(ctx: CanvasRenderingContext2D, box: Bbox): void {
  const [x1, y1, x2, y2] = box;
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  ctx.save();
  ctx.strokeStyle = "#00e5ff";
  ctx.lineWidth = 2;
  ctx.setLineDash([6, 4]);
  ctx.strokeRect(x1 * w, y1 * h, (x2 - x1) * w, (y2 - y1) * h);
  ctx.restore();
}

/** Mask painting surface for retexture mode: an offscreen canvas the brush
 *  writes into, exported as a grayscale PNG data payload. */
export class MaskBrush {
  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;

  constructor(
    public readonly size: number,
    public radius: number = 4,
  ) {
    this.canvas = document.createElement("canvas");
    this.canvas.width = size;
    this.canvas.height = size;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) throw new Error("2d context unavailable");
    this.ctx = ctx;
    this.clear();
  }

  clear(): void {
    this.ctx.fillStyle = "#000";
    this.ctx.fillRect(0, 0, this.size, this.size);
  }

  paint(normX: number, normY: number, erase = false): void {
    this.ctx.fillStyle = erase ? "#000" : "#fff";
    this.ctx.beginPath();
    this.ctx.arc(normX * this.size, normY * this.size, this.radius, 0, 2 * Math.PI);
    this.ctx.fill();
  }

  isEmpty(): boolean {
    const data = this.ctx.getImageData(0, 0, this.size, this.size).data;
    for (let i = 0; i < data.length; i += 4) {
      if (data[i] > 127) return false;
    }
    return true;
  }

  overlayOn(ctx: CanvasRenderingContext2D): void {
    ctx.save();
    ctx.globalAlpha = 0.45;
    ctx.drawImage(this.canvas, 0, 0, ctx.canvas.width, ctx.canvas.height);
    ctx.restore();
  }

  toMaskB64(): string {
    return this.canvas.toDataURL("image/png").split(",")[1];
  }
}

export function b64ToImage(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = reject;
    img.src = `data:image/png;base64,${b64}`;
  });
}

/** Re-encode an uploaded file as a square PNG at the model resolution. */
export async function fileToSquareB64(file: File, size: number): Promise<string> {
  const bitmap = await createImageBitmap(file);
  const canvas = document.createElement("canvas");
  canvas.width = size;
  canvas.height = size;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  ctx.drawImage(bitmap, 0, 0, size, size);
  return canvas.toDataURL("image/png").split(",")[1];
}
