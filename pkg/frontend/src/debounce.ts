// Trailing-edge debounce used for slider release: the wrapped function runs
// once, delay ms after the last call.

export function debounce<A extends unknown[]>(
    fn: (...args: A) => void,
    delayMs: number
): ((...args: A) => void) & { cancel: () => void } {
    let timer: ReturnType<typeof setTimeout> | null = null;
    const wrapped = (...args: A) => {
        if (timer !== null) clearTimeout(timer);
        timer = setTimeout(() => {
            timer = null;
            fn(...args);
        }, delayMs);
    };
    wrapped.cancel = () => {
        if (timer !== null) clearTimeout(timer);
        timer = null;
    };
    return wrapped;
}
