// Thin client over the editing service. At most one request is in flight;
// issuing a new edit aborts the pending one.

export interface Scales {
    s_y: number;
    s_edit: number;
    s_non_edit: number;
}

export interface ScaleRange {
    min: number;
    max: number;
    default: number;
}

export interface Grammar {
    shapes: string[];
    colors: string[];
    background_styles: string[];
    format: string;
    scales: { s_y: ScaleRange; s_edit: ScaleRange; s_non_edit: ScaleRange };
}

export interface EditParams {
    image: string; // base64 PNG
    source_prompt: string;
    edit_prompt: string;
    scales: Scales;
    user_mask?: string;
}

export interface EditResult {
    edited_image: string;
    mask: string;
    timings_ms: { invert: number; mask: number; generate: number; total: number };
}

export class ApiError extends Error {
    status: number;
    constructor(status: number, message: string) {
        super(message);
        this.status = status;
    }
}

export class EditClient {
    private base: string;
    private fetchImpl: typeof fetch;
    private pending: AbortController | null = null;

    constructor(base = '', fetchImpl: typeof fetch = fetch) {
        this.base = base;
        this.fetchImpl = fetchImpl;
    }

    get hasPending(): boolean {
        return this.pending !== null;
    }

    async grammar(): Promise<Grammar> {
        const res = await this.fetchImpl(`${this.base}/api/prompt-grammar`);
        if (!res.ok) throw new ApiError(res.status, await res.text());
        return res.json();
    }

    async health(): Promise<{ status: string; models: boolean }> {
        const res = await this.fetchImpl(`${this.base}/api/health`);
        if (!res.ok) throw new ApiError(res.status, await res.text());
        return res.json();
    }

    // Returns null when superseded by a newer request.
    async edit(params: EditParams): Promise<EditResult | null> {
        if (this.pending) this.pending.abort();
        const controller = new AbortController();
        this.pending = controller;
        try {
            const res = await this.fetchImpl(`${this.base}/api/edit`, {
                method: 'POST',
                headers: { 'Content-Type': 'application/json' },
                body: JSON.stringify(params),
                signal: controller.signal,
            });
            if (!res.ok) throw new ApiError(res.status, await res.text());
            return (await res.json()) as EditResult;
        } catch (err) {
            if (err instanceof Error && err.name === 'AbortError') return null;
            throw err;
        } finally {
            if (this.pending === controller) this.pending = null;
        }
    }
}
