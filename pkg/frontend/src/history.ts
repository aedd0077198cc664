/** Append-only record of completed enhancements. */

import type { Controls } from "./controls.js";

export interface HistoryEntry {
  readonly jobId: string;
  readonly controls: Readonly<Controls>;
  /** Encoded PNG as returned by the service. */
  readonly resultPng: Uint8Array;
  readonly maskedRegion: boolean;
  readonly completedAt: number;
}

export class History {
  private entries: ReadonlyArray<HistoryEntry> = [];

  /** Freeze and append; the stored entry can never change afterwards. */
  add(entry: {
    jobId: string;
    controls: Controls;
    resultPng: Uint8Array;
    maskedRegion: boolean;
    completedAt?: number;
  }): HistoryEntry {
    const frozen: HistoryEntry = Object.freeze({
      jobId: entry.jobId,
      controls: Object.freeze({ ...entry.controls }),
      resultPng: entry.resultPng.slice(),
      maskedRegion: entry.maskedRegion,
      completedAt: entry.completedAt ?? Date.now(),
    });
    this.entries = Object.freeze([...this.entries, frozen]) as
      ReadonlyArray<HistoryEntry>;
    return frozen;
  }

  list(): ReadonlyArray<HistoryEntry> {
    return this.entries;
  }

  get length(): number {
    return this.entries.length;
  }

  at(index: number): HistoryEntry {
    const entry = this.entries[index];
    if (!entry) {
      throw new Error(`no history entry ${index}`);
    }
    return entry;
  }
}
