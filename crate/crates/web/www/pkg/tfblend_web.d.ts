/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    frames(): Uint32Array;
    constructor(seed: number);
    set_delta(delta: number): void;
    set_learning_rate(lr: number): void;
    set_modules(tr: boolean, fa: boolean, fb: boolean): void;
    set_variant(name: string): void;
    train(steps: number): string;
    view(frame: number): string;
}

export function cost_ratio_curve(extraction: number, task: number, blend: number, max_neighbors: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly cost_ratio_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_frames: (a: number) => [number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_set_delta: (a: number, b: number) => [number, number];
    readonly demo_set_learning_rate: (a: number, b: number) => void;
    readonly demo_set_modules: (a: number, b: number, c: number, d: number) => void;
    readonly demo_set_variant: (a: number, b: number, c: number) => [number, number];
    readonly demo_train: (a: number, b: number) => [number, number, number, number];
    readonly demo_view: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
