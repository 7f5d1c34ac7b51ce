// Append-only edit history. Entries are never mutated or removed; restoring
// only copies an old entry's parameters/result back to the caller.

import { EditParams, EditResult } from './api.js';

export interface HistoryEntry {
    readonly id: number;
    readonly at: string; // ISO timestamp
    readonly params: EditParams;
    readonly result: EditResult;
}

export class EditHistory {
    private entries: HistoryEntry[] = [];
    private nextId = 1;

    get length(): number {
        return this.entries.length;
    }

    push(params: EditParams, result: EditResult): HistoryEntry {
        const entry: HistoryEntry = {
            id: this.nextId++,
            at: new Date().toISOString(),
            params: structuredClone(params),
            result: structuredClone(result),
        };
        this.entries.push(entry);
        return entry;
    }

    list(): readonly HistoryEntry[] {
        return this.entries;
    }

    get(id: number): HistoryEntry | undefined {
        return this.entries.find((e) => e.id === id);
    }

    // Deep copy so a restored entry cannot be edited in place.
    restore(id: number): { params: EditParams; result: EditResult } | undefined {
        const entry = this.get(id);
        if (!entry) return undefined;
        return {
            params: structuredClone(entry.params),
            result: structuredClone(entry.result),
        };
    }
}
