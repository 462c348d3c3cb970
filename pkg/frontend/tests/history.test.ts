import { describe, expect, it } from "vitest";

import { SessionHistory, canonicalParams } from "../src/history.js";
import { bytesEqual } from "../src/audio.js";

let counter = 0;

function makeResult(params: Record<string, unknown>, id?: string) {
  counter += 1;
  return {
    id: id ?? `item-${counter}`,
    params,
    spectrogram: { base64: "aGk=", width: 8, height: 8 },
  };
}

const someAudio = () => new Uint8Array([82, 73, 70, 70, 1, 2, 3]);

describe("session tree", () => {
  it("starts empty", () => {
    const h = new SessionHistory();
    expect(h.size).toBe(0);
    expect(h.roots()).toEqual([]);
  });

  it("links children to their parent and keeps insertion order", () => {
    const h = new SessionHistory();
    const root = h.add(makeResult({ seed: 1 }), someAudio());
    const childA = h.add(makeResult({ seed: 2 }), someAudio(), root.id);
    const childB = h.add(makeResult({ seed: 3 }), someAudio(), root.id);
    const grand = h.add(makeResult({ seed: 4 }), someAudio(), childA.id);
    expect(h.roots().map((i) => i.id)).toEqual([root.id]);
    expect(h.children(root.id).map((i) => i.id)).toEqual([childA.id, childB.id]);
    expect(h.children(childA.id).map((i) => i.id)).toEqual([grand.id]);
    expect(h.size).toBe(4);
  });

  it("rejects unknown parents and duplicate ids", () => {
    const h = new SessionHistory();
    h.add(makeResult({ seed: 1 }, "fixed"), someAudio());
    expect(() => h.add(makeResult({ seed: 2 }), someAudio(), "nope")).toThrow(/not in the history/);
    expect(() => h.add(makeResult({ seed: 3 }, "fixed"), someAudio())).toThrow(/already holds/);
  });

  it("stores the audio bytes verbatim", () => {
    const h = new SessionHistory();
    const bytes = someAudio();
    const item = h.add(makeResult({ seed: 1 }), bytes);
    expect(bytesEqual(item.audio, bytes)).toBe(true);
  });

  it("freezes the params echo against mutation", () => {
    const h = new SessionHistory();
    const item = h.add(makeResult({ seed: 1, nested: { w: 2 } }), someAudio());
    expect(Object.isFrozen(item.params)).toBe(true);
    expect(() => {
      (item.params as Record<string, unknown>).seed = 999;
    }).toThrow(TypeError);
    expect(() => {
      (item.params.nested as Record<string, unknown>).w = 0;
    }).toThrow(TypeError);
  });
});

describe("duplicate detection", () => {
  it("flags a later item whose params echo matches an earlier one", () => {
    const h = new SessionHistory();
    const first = h.add(makeResult({ prompt: "p", seed: 7, guidance_w: 2 }), someAudio());
    const repeat = h.add(makeResult({ seed: 7, guidance_w: 2, prompt: "p" }), someAudio());
    expect(first.duplicate).toBe(false);
    expect(repeat.duplicate).toBe(true);
  });

  it("does not flag a different seed", () => {
    const h = new SessionHistory();
    h.add(makeResult({ prompt: "p", seed: 7 }), someAudio());
    const other = h.add(makeResult({ prompt: "p", seed: 8 }), someAudio());
    expect(other.duplicate).toBe(false);
  });

  it("canonicalParams is key-order independent", () => {
    expect(canonicalParams({ a: 1, b: { c: 2, d: 3 } })).toBe(
      canonicalParams({ b: { d: 3, c: 2 }, a: 1 }),
    );
  });
});

describe("deletion", () => {
  it("removes the whole subtree rooted at the deleted node", () => {
    const h = new SessionHistory();
    const root = h.add(makeResult({ seed: 1 }), someAudio());
    const child = h.add(makeResult({ seed: 2 }), someAudio(), root.id);
    const grand = h.add(makeResult({ seed: 3 }), someAudio(), child.id);
    const sibling = h.add(makeResult({ seed: 4 }), someAudio(), root.id);
    const removed = h.delete(child.id);
    expect(new Set(removed)).toEqual(new Set([child.id, grand.id]));
    expect(h.size).toBe(2);
    expect(h.children(root.id).map((i) => i.id)).toEqual([sibling.id]);
  });

  it("deleting the only root empties the session", () => {
    const h = new SessionHistory();
    const root = h.add(makeResult({ seed: 1 }), someAudio());
    h.add(makeResult({ seed: 2 }), someAudio(), root.id);
    h.delete(root.id);
    expect(h.size).toBe(0);
    expect(h.roots()).toEqual([]);
  });
});

describe("params export", () => {
  it("serializes the exact params echo as pretty JSON", () => {
    const h = new SessionHistory();
    const params = {
      command: "generate",
      prompt: "a dark bass note",
      guidance_w: 2,
      seed: 11,
      steps: 50,
      checkpoints: { vqgan: "aa", embedding: "bb", diffusion: "cc" },
    };
    const item = h.add(makeResult(params), someAudio());
    const text = h.exportParams(item.id);
    expect(text.endsWith("\n")).toBe(true);
    expect(JSON.parse(text)).toEqual(params);
  });

  it("throws for unknown items", () => {
    const h = new SessionHistory();
    expect(() => h.exportParams("missing")).toThrow(/no history item/);
  });
});
