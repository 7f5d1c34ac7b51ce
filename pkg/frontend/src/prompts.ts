// Prompt assembly from grammar selections. The grammar itself always comes
// from the server; nothing here hardcodes shapes or colors.

import { Grammar } from './api.js';

export interface PromptSelection {
    color: string;
    shape: string;
    style: string;
    bgColor: string;
}

export function promptText(sel: PromptSelection): string {
    return `${sel.color} ${sel.shape}/${sel.style} ${sel.bgColor}`;
}

export function defaultSelection(grammar: Grammar): PromptSelection {
    return {
        color: grammar.colors[0],
        shape: grammar.shapes[0],
        style: grammar.background_styles[0],
        bgColor: grammar.colors[1],
    };
}

export function fillSelect(select: HTMLSelectElement, options: string[], value: string): void {
    select.innerHTML = '';
    for (const opt of options) {
        const el = document.createElement('option');
        el.value = opt;
        el.textContent = opt;
        if (opt === value) el.selected = true;
        select.appendChild(el);
    }
}
