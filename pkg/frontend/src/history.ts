/**
 * Generation history: a tree of session items linked parent -> child.
 *
 * Each item stores the service's params echo verbatim (frozen, never
 * mutated) plus the raw audio bytes and spectrogram image, so any item can
 * be re-produced through the CLI from its exported params alone and
 * byte-compared against siblings.
 */

import type { JobResult } from "./api.js";

export interface SessionItem {
  readonly id: string;
  readonly parentId: string | null;
  /** Params echo from the service, frozen on insert. */
  readonly params: Readonly<Record<string, unknown>>;
  /** Raw WAV bytes exactly as returned — stored without re-encoding. */
  readonly audio: Uint8Array;
  readonly spectrogram: { base64: string; width: number; height: number };
  /** True when another item already holds an identical params echo. */
  readonly duplicate: boolean;
  readonly createdAt: number;
}

function deepFreeze<T>(value: T): T {
  if (value !== null && typeof value === "object" && !Object.isFrozen(value)) {
    Object.freeze(value);
    for (const key of Object.getOwnPropertyNames(value)) {
      deepFreeze((value as Record<string, unknown>)[key]);
    }
  }
  return value;
}

/** Order-insensitive canonical encoding used for duplicate detection. */
export function canonicalParams(params: Record<string, unknown>): string {
  const encode = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(encode);
    if (v !== null && typeof v === "object") {
      const entries = Object.entries(v as Record<string, unknown>)
        .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
        .map(([k, val]) => [k, encode(val)]);
      return Object.fromEntries(entries);
    }
    return v;
  };
  return JSON.stringify(encode(params));
}

export class SessionHistory {
  private byId = new Map<string, SessionItem>();
  private order: string[] = [];

  get size(): number {
    return this.order.length;
  }

  items(): SessionItem[] {
    return this.order.map((id) => this.byId.get(id)!);
  }

  get(id: string): SessionItem | undefined {
    return this.byId.get(id);
  }

  roots(): SessionItem[] {
    return this.items().filter((it) => it.parentId === null);
  }

  children(id: string): SessionItem[] {
    return this.items().filter((it) => it.parentId === id);
  }

  add(
    result: Pick<JobResult, "id" | "params" | "spectrogram">,
    audio: Uint8Array,
    parentId: string | null = null,
  ): SessionItem {
    if (this.byId.has(result.id)) {
      throw new Error(`history already holds item ${result.id}`);
    }
    if (parentId !== null && !this.byId.has(parentId)) {
      throw new Error(`parent ${parentId} is not in the history`);
    }
    const canon = canonicalParams(result.params);
    const duplicate = this.items().some(
      (it) => canonicalParams(it.params as Record<string, unknown>) === canon,
    );
    const item: SessionItem = {
      id: result.id,
      parentId,
      params: deepFreeze(structuredClone(result.params)),
      audio,
      spectrogram: {
        base64: result.spectrogram.base64,
        width: result.spectrogram.width,
        height: result.spectrogram.height,
      },
      duplicate,
      createdAt: Date.now(),
    };
    this.byId.set(item.id, item);
    this.order.push(item.id);
    return item;
  }

  /** Remove an item and its whole subtree; returns the removed ids. */
  delete(id: string): string[] {
    if (!this.byId.has(id)) return [];
    const doomed = new Set<string>([id]);
    let grew = true;
    while (grew) {
      grew = false;
      for (const item of this.items()) {
        if (
          item.parentId !== null &&
          doomed.has(item.parentId) &&
          !doomed.has(item.id)
        ) {
          doomed.add(item.id);
          grew = true;
        }
      }
    }
    this.order = this.order.filter((x) => !doomed.has(x));
    for (const x of doomed) this.byId.delete(x);
    return [...doomed];
  }

  /**
   * The item's params echo as pretty JSON — everything the CLI needs to
   * reproduce the same audio (command, prompt, seed, steps, guidance,
   * checkpoint hashes).
   */
  exportParams(id: string): string {
    const item = this.byId.get(id);
    if (item === undefined) throw new Error(`no history item ${id}`);
    return JSON.stringify(item.params, null, 2) + "\n";
  }
}
