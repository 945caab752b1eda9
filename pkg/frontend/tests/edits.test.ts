import { describe, expect, it } from "vitest";

import { EditSession, canvasToSource, normalizeRect } from "../src/edits.js";

describe("canvasToSource", () => {
  it("divides by the zoom factor", () => {
    expect(canvasToSource(100, 40, 0.5)).toEqual([200, 80]);
    expect(canvasToSource(33, 77, 1)).toEqual([33, 77]);
  });

  it("rejects non-positive scale", () => {
    expect(() => canvasToSource(1, 1, 0)).toThrow();
  });
});

describe("normalizeRect", () => {
  it("orders corners regardless of drag direction", () => {
    const rect = normalizeRect(60, 50, 10, 20, 100, 100);
    expect(rect).toEqual({ kind: "crop", x0: 10, y0: 20, x1: 60, y1: 50 });
  });

  it("clamps to image bounds and keeps integers", () => {
    const rect = normalizeRect(-5.2, 3.7, 104.9, 98.1, 100, 90);
    expect(rect).toEqual({ kind: "crop", x0: 0, y0: 3, x1: 100, y1: 90 });
  });

  it("rejects degenerate rectangles", () => {
    expect(() => normalizeRect(10, 10, 10, 40, 100, 100)).toThrow();
  });
});

describe("EditSession", () => {
  it("serializes to the pipeline's edits schema", () => {
    const session = new EditSession();
    session.addCrop({ kind: "crop", x0: 10, y0: 10, x1: 60, y1: 60 });
    session.startStroke(4);
    session.extendStroke(12, 14);
    session.extendStroke(20, 22);
    session.endStroke();
    expect(JSON.parse(session.serialize())).toEqual({
      edits: [
        { kind: "crop", x0: 10, y0: 10, x1: 60, y1: 60 },
        { kind: "erase", points: [[12, 14], [20, 22]], radius: 4 },
      ],
    });
  });

  it("starts with no edits", () => {
    expect(new EditSession().toPayload()).toEqual({ edits: [] });
  });

  it("drops empty strokes", () => {
    const session = new EditSession();
    session.startStroke(3);
    session.endStroke();
    expect(session.pendingEdits).toHaveLength(0);
  });

  it("undo restores the prior state", () => {
    const session = new EditSession();
    session.addCrop({ kind: "crop", x0: 0, y0: 0, x1: 5, y1: 5 });
    const before = session.serialize();
    session.addCrop({ kind: "crop", x0: 1, y0: 1, x1: 4, y1: 4 });
    session.undo();
    expect(session.serialize()).toEqual(before);
    session.undo();
    expect(session.pendingEdits).toHaveLength(0);
  });

  it("payload is detached from later mutation", () => {
    const session = new EditSession();
    session.startStroke(2);
    session.extendStroke(1, 1);
    session.endStroke();
    const payload = session.toPayload();
    session.undo();
    expect(payload.edits).toHaveLength(1);
  });
});
