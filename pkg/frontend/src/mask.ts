/**
 * Binary mask raster painted over the spectrogram.
 *
 * Cell semantics match the service: 1 = keep, 0 = regenerate. The run-length
 * export format is identical to the Python side (`shape` plus alternating
 * counts starting with a run of zeros), so masks round-trip between the UI,
 * files on disk, and CLI flags without loss.
 */

export interface RlePayload {
  shape: [number, number];
  counts: number[];
}

export const MAX_UNDO_DEPTH = 50;

export class MaskCanvasState {
  readonly height: number;
  readonly width: number;
  brushSize: number;
  private raster: Uint8Array;
  private undoStack: Uint8Array[] = [];

  constructor(height: number, width: number, brushSize = 8) {
    if (!Number.isInteger(height) || !Number.isInteger(width) || height < 1 || width < 1) {
      throw new Error(`mask dims must be positive integers, got ${height}x${width}`);
    }
    if (brushSize < 1) throw new Error("brush size must be >= 1");
    this.height = height;
    this.width = width;
    this.brushSize = brushSize;
    this.raster = new Uint8Array(height * width).fill(1); // start all-keep
  }

  get(row: number, col: number): number {
    this.checkBounds(row, col);
    return this.raster[row * this.width + col];
  }

  /** Copy of the raster, row-major. */
  toArray(): Uint8Array {
    return this.raster.slice();
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  private checkBounds(row: number, col: number): void {
    if (row < 0 || row >= this.height || col < 0 || col >= this.width) {
      throw new Error(
        `cell (${row}, ${col}) outside mask ${this.height}x${this.width}`,
      );
    }
  }

  /** Snapshot the raster before a stroke so it can be undone as a unit. */
  beginStroke(): void {
    this.undoStack.push(this.raster.slice());
    if (this.undoStack.length > MAX_UNDO_DEPTH) {
      this.undoStack.shift();
    }
  }

  /** Stamp a brush-sized square of `value` centred on (row, col). */
  paint(row: number, col: number, value: 0 | 1): void {
    this.checkBounds(row, col);
    const half = Math.floor(this.brushSize / 2);
    const r0 = Math.max(0, row - half);
    const r1 = Math.min(this.height - 1, row - half + this.brushSize - 1);
    const c0 = Math.max(0, col - half);
    const c1 = Math.min(this.width - 1, col - half + this.brushSize - 1);
    for (let r = r0; r <= r1; r++) {
      for (let c = c0; c <= c1; c++) {
        this.raster[r * this.width + c] = value;
      }
    }
  }

  fill(value: 0 | 1): void {
    this.raster.fill(value);
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (prev === undefined) return false;
    this.raster = prev;
    return true;
  }

  equals(other: MaskCanvasState): boolean {
    if (other.height !== this.height || other.width !== this.width) return false;
    const a = this.raster;
    const b = other.raster;
    for (let i = 0; i < a.length; i++) {
      if (a[i] !== b[i]) return false;
    }
    return true;
  }

  /** Fraction of cells marked keep; 1 means the mask is a no-op. */
  keepFraction(): number {
    let kept = 0;
    for (const v of this.raster) kept += v;
    return kept / this.raster.length;
  }

  exportRle(): RlePayload {
    const counts: number[] = [];
    let value = 0;
    let run = 0;
    for (const v of this.raster) {
      if (v === value) {
        run += 1;
      } else {
        counts.push(run);
        value = v;
        run = 1;
      }
    }
    counts.push(run);
    return { shape: [this.height, this.width], counts };
  }

  static importRle(payload: RlePayload, brushSize = 8): MaskCanvasState {
    const [h, w] = payload.shape;
    const mask = new MaskCanvasState(h, w, brushSize);
    const flat = new Uint8Array(h * w);
    let pos = 0;
    let value = 0;
    for (const count of payload.counts) {
      if (count < 0 || pos + count > flat.length) {
        throw new Error("run lengths do not cover the mask");
      }
      flat.fill(value, pos, pos + count);
      pos += count;
      value = 1 - value;
    }
    if (pos !== flat.length) {
      throw new Error("run lengths do not cover the mask");
    }
    mask.raster = flat;
    return mask;
  }
}
