// Wires the page together: image upload, prompt pickers fed by the server
// grammar, attention-scale sliders (debounced on release), and the
// append-only history strip.

import { EditClient, EditParams, EditResult, Grammar } from './api.js';
import { debounce } from './debounce.js';
import { EditHistory } from './history.js';
import { defaultSelection, fillSelect, promptText } from './prompts.js';

const DEBOUNCE_MS = 250;

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
}

function drawB64(canvas: HTMLCanvasElement, b64: string): void {
    const img = new Image();
    img.onload = () => {
        const ctx = canvas.getContext('2d')!;
        ctx.imageSmoothingEnabled = false;
        ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    };
    img.src = `data:image/png;base64,${b64}`;
}

export async function initApp(client: EditClient = new EditClient()): Promise<void> {
    const status = el<HTMLSpanElement>('status');
    const health = await client.health();
    if (!health.models) {
        status.textContent = 'service is up but no models are loaded';
        return;
    }

    const grammar: Grammar = await client.grammar();
    const history = new EditHistory();

    const sourceSel = defaultSelection(grammar);
    const editSel = defaultSelection(grammar);
    fillSelect(el('src-color'), grammar.colors, sourceSel.color);
    fillSelect(el('src-shape'), grammar.shapes, sourceSel.shape);
    fillSelect(el('src-style'), grammar.background_styles, sourceSel.style);
    fillSelect(el('src-bg'), grammar.colors, sourceSel.bgColor);
    fillSelect(el('edit-color'), grammar.colors, editSel.color);
    fillSelect(el('edit-shape'), grammar.shapes, editSel.shape);
    fillSelect(el('edit-style'), grammar.background_styles, editSel.style);
    fillSelect(el('edit-bg'), grammar.colors, editSel.bgColor);

    const sliders: Record<string, HTMLInputElement> = {
        s_y: el('slider-sy'),
        s_edit: el('slider-sedit'),
        s_non_edit: el('slider-snonedit'),
    };
    for (const [name, range] of Object.entries(grammar.scales)) {
        const slider = sliders[name];
        slider.min = `${range.min}`;
        slider.max = `${range.max}`;
        slider.step = '0.05';
        slider.value = `${range.default}`;
        el(`${slider.id}-value`).textContent = slider.value;
    }

    let imageB64: string | null = null;

    function currentParams(): EditParams | null {
        if (!imageB64) return null;
        const read = (prefix: string) => ({
            color: el<HTMLSelectElement>(`${prefix}-color`).value,
            shape: el<HTMLSelectElement>(`${prefix}-shape`).value,
            style: el<HTMLSelectElement>(`${prefix}-style`).value,
            bgColor: el<HTMLSelectElement>(`${prefix}-bg`).value,
        });
        return {
            image: imageB64,
            source_prompt: promptText(read('src')),
            edit_prompt: promptText(read('edit')),
            scales: {
                s_y: Number(sliders.s_y.value),
                s_edit: Number(sliders.s_edit.value),
                s_non_edit: Number(sliders.s_non_edit.value),
            },
        };
    }

    async function runEdit(): Promise<void> {
        const params = currentParams();
        if (!params) return;
        status.textContent = 'editing...';
        let result: EditResult | null;
        try {
            result = await client.edit(params);
        } catch (err) {
            status.textContent = `edit failed: ${err}`;
            return;
        }
        if (result === null) return; // superseded by a newer request
        drawB64(el('canvas-edited'), result.edited_image);
        drawB64(el('canvas-mask'), result.mask);
        status.textContent = `done in ${result.timings_ms.total.toFixed(0)} ms`;
        const entry = history.push(params, result);
        appendHistoryItem(entry.id);
    }

    const debouncedEdit = debounce(runEdit, DEBOUNCE_MS);

    function appendHistoryItem(id: number): void {
        const item = document.createElement('button');
        item.textContent = `#${id}`;
        item.className = 'history-item';
        item.addEventListener('click', () => {
            const restored = history.restore(id);
            if (!restored) return;
            drawB64(el('canvas-edited'), restored.result.edited_image);
            drawB64(el('canvas-mask'), restored.result.mask);
            status.textContent = `restored edit #${id}`;
        });
        el('history').appendChild(item);
    }

    el<HTMLInputElement>('file-input').addEventListener('change', (evt) => {
        const file = (evt.target as HTMLInputElement).files?.[0];
        if (!file) return;
        const reader = new FileReader();
        reader.onload = () => {
            const url = reader.result as string;
            imageB64 = url.slice(url.indexOf(',') + 1);
            const img = new Image();
            img.onload = () => {
                const canvas = el<HTMLCanvasElement>('canvas-source');
                const ctx = canvas.getContext('2d')!;
                ctx.imageSmoothingEnabled = false;
                ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
            };
            img.src = url;
            void runEdit();
        };
        reader.readAsDataURL(file);
    });

    document.querySelectorAll('select').forEach((select) => {
        select.addEventListener('change', () => void runEdit());
    });
    for (const slider of Object.values(sliders)) {
        slider.addEventListener('input', () => {
            el(`${slider.id}-value`).textContent = slider.value;
        });
        // 'change' fires on release; debounced so rapid adjustments collapse
        // into a single request
        slider.addEventListener('change', () => debouncedEdit());
    }

    status.textContent = 'ready';
}

if (typeof document !== 'undefined' && document.getElementById('status')) {
    void initApp();
}
