/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const coverage_rgba: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const gamma_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const suppression: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const tile_counts: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
