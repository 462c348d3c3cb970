/**
 * Audio helpers: byte-exact comparison, WAV blob wrapping, and a two-deck
 * A/B player with a synchronized playhead for parent/child auditioning.
 */

export function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) {
    if (a[i] !== b[i]) return false;
  }
  return true;
}

export function wavBlob(bytes: Uint8Array): Blob {
  const copy = new Uint8Array(bytes); // detach from any shared buffer view
  return new Blob([copy.buffer], { type: "audio/wav" });
}

export function objectUrlForWav(bytes: Uint8Array): string {
  return URL.createObjectURL(wavBlob(bytes));
}

/**
 * Two HTMLAudio decks (parent = A, child = B) that share a playhead:
 * switching decks mid-play continues from the same position so timbre
 * differences are judged on the same note segment.
 */
export class AbPlayer {
  private readonly deckA: HTMLAudioElement;
  private readonly deckB: HTMLAudioElement;
  private active: "a" | "b" = "a";

  constructor(deckA: HTMLAudioElement, deckB: HTMLAudioElement) {
    this.deckA = deckA;
    this.deckB = deckB;
  }

  get activeDeck(): "a" | "b" {
    return this.active;
  }

  load(aBytes: Uint8Array, bBytes: Uint8Array): void {
    this.deckA.src = objectUrlForWav(aBytes);
    this.deckB.src = objectUrlForWav(bBytes);
  }

  play(): void {
    void this.current().play();
  }

  pause(): void {
    this.current().pause();
  }

  /** Swap decks, carrying the playhead and play state across. */
  switchTo(deck: "a" | "b"): void {
    if (deck === this.active) return;
    const from = this.current();
    const to = deck === "a" ? this.deckA : this.deckB;
    const wasPlaying = !from.paused;
    to.currentTime = from.currentTime;
    from.pause();
    this.active = deck;
    if (wasPlaying) void to.play();
  }

  toggle(): void {
    this.switchTo(this.active === "a" ? "b" : "a");
  }

  private current(): HTMLAudioElement {
    return this.active === "a" ? this.deckA : this.deckB;
  }
}
