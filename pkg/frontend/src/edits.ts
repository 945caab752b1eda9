/**
 * Edit-session state: crop rectangle and eraser strokes.
 *
 * All geometry is stored in source-image pixel coordinates, independent of
 * canvas zoom, so the server reproduces exactly what the user drew. The
 * serialized payload matches the pipeline's edits JSON schema.
 */

export interface CropEdit {
  kind: "crop";
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface EraseEdit {
  kind: "erase";
  points: [number, number][];
  radius: number;
}

export type Edit = CropEdit | EraseEdit;

export interface EditsPayload {
  edits: Edit[];
}

/** Map a canvas-space point into source-image pixels at the given zoom. */
export function canvasToSource(x: number, y: number, scale: number): [number, number] {
  if (scale <= 0) throw new Error("scale must be positive");
  return [x / scale, y / scale];
}

/** Order a dragged rectangle's corners and clamp it to the image bounds. */
export function normalizeRect(
  ax: number,
  ay: number,
  bx: number,
  by: number,
  width: number,
  height: number,
): CropEdit {
  const x0 = Math.max(0, Math.floor(Math.min(ax, bx)));
  const y0 = Math.max(0, Math.floor(Math.min(ay, by)));
  const x1 = Math.min(width, Math.ceil(Math.max(ax, bx)));
  const y1 = Math.min(height, Math.ceil(Math.max(ay, by)));
  if (x1 <= x0 || y1 <= y0) throw new Error("degenerate crop rectangle");
  return { kind: "crop", x0, y0, x1, y1 };
}

export class EditSession {
  jobId: string | null = null;
  lastReport: unknown = null;
  private edits: Edit[] = [];
  private activeStroke: EraseEdit | null = null;

  get pendingEdits(): readonly Edit[] {
    return this.edits;
  }

  addCrop(rect: CropEdit): void {
    this.edits.push(rect);
  }

  startStroke(radius: number): void {
    if (radius <= 0) throw new Error("stroke radius must be positive");
    this.activeStroke = { kind: "erase", points: [], radius };
  }

  extendStroke(x: number, y: number): void {
    if (!this.activeStroke) throw new Error("no active stroke");
    this.activeStroke.points.push([x, y]);
  }

  endStroke(): void {
    if (!this.activeStroke) return;
    if (this.activeStroke.points.length > 0) {
      this.edits.push(this.activeStroke);
    }
    this.activeStroke = null;
  }

  /** Remove the most recent committed edit. */
  undo(): Edit | undefined {
    return this.edits.pop();
  }

  clear(): void {
    this.edits = [];
    this.activeStroke = null;
  }

  toPayload(): EditsPayload {
    return { edits: this.edits.map((e) => structuredClone(e)) };
  }

  serialize(): string {
    return JSON.stringify(this.toPayload());
  }
}
