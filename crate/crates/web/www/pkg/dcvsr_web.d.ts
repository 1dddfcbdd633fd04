/* tslint:disable */
/* eslint-disable */

/**
 * [`coverage_values`] rendered as RGBA, with tile origins marked.
 */
export function coverage_rgba(height: number, width: number, tile_h: number, tile_w: number, sigma_fraction: number): Uint8Array;

export function gamma_curve(steps: number, sigma_min: number, sigma_max: number, rho: number): Float64Array;

export function suppression(tokens: number, dim: number, gamma: number, seed: bigint): Float64Array;

/**
 * Number of tiles along each axis, `[rows, cols]`.
 */
export function tile_counts(height: number, width: number, tile_h: number, tile_w: number): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly coverage_rgba: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly gamma_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly suppression: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly tile_counts: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
