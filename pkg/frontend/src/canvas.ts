/** Frame blitting. Browser-only; kept out of the unit-tested core. */

import type { FrameMessage } from "./protocol.js";

export class FramePainter {
  private readonly ctx: CanvasRenderingContext2D;
  /** Monotone counter so a slow decode never paints over a newer frame. */
  private epoch = 0;

  constructor(private readonly canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (ctx === null) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
  }

  /** Decode the PNG payload and draw it scaled to the canvas with
   * nearest-neighbor filtering, so low-spp pixels stay crisp. */
  async paint(frame: FrameMessage): Promise<void> {
    const epoch = ++this.epoch;
    const img = new Image();
    img.src = `data:image/png;base64,${frame.data}`;
    await img.decode();
    if (epoch !== this.epoch) return;
    this.ctx.imageSmoothingEnabled = false;
    this.ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    this.ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
  }
}
