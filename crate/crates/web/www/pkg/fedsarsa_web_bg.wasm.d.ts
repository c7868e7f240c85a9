/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const drift_curve: (a: number, b: number, c: number) => [number, number];
export const heterogeneity_grid: (a: number) => [number, number];
export const simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
