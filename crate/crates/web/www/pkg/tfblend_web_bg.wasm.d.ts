/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const cost_ratio_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_frames: (a: number) => [number, number];
export const demo_new: (a: number) => [number, number, number];
export const demo_set_delta: (a: number, b: number) => [number, number];
export const demo_set_learning_rate: (a: number, b: number) => void;
export const demo_set_modules: (a: number, b: number, c: number, d: number) => void;
export const demo_set_variant: (a: number, b: number, c: number) => [number, number];
export const demo_train: (a: number, b: number) => [number, number, number, number];
export const demo_view: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
