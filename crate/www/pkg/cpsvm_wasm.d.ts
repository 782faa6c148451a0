/* tslint:disable */
/* eslint-disable */

/**
 * A one-class model on points in the unit square.
 */
export class Boundary {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Adds a point. The first batch fit happens once `nu * n >= 1`; after that
     * each point is inserted incrementally.
     */
    add_point(x: number, y: number): string;
    /**
     * Decision values on a `res × res` grid over the unit square, row by row
     * from the top. Empty before the first fit.
     */
    grid(res: number): Float64Array;
    constructor(nu: number, sigma: number);
    point_count(): number;
    /**
     * Per point: 0 reserve, 1 margin, 2 error, 3 not yet trained.
     */
    point_sets(): Uint8Array;
    /**
     * Flat `[x0, y0, x1, y1, ...]` of the stored points.
     */
    points(): Float64Array;
    rho(): number;
}

/**
 * Replays the drift scenario (500 training slices, local faults, then a
 * global shift) under `policy`.
 */
export function drift_stream(seed: number, policy: string, drift_mu_shift: number, gamma_multiplier: number): string;

/**
 * RMSE curves of SGD, PSGD and NESGD on a seeded `i × j × k` tensor.
 */
export function optimizer_curves(i: number, j: number, k: number, steps: number, seed: number, noise: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_boundary_free: (a: number, b: number) => void;
    readonly boundary_add_point: (a: number, b: number, c: number) => [number, number, number, number];
    readonly boundary_grid: (a: number, b: number) => [number, number, number, number];
    readonly boundary_new: (a: number, b: number) => [number, number, number];
    readonly boundary_point_count: (a: number) => number;
    readonly boundary_point_sets: (a: number) => [number, number];
    readonly boundary_points: (a: number) => [number, number];
    readonly boundary_rho: (a: number) => number;
    readonly drift_stream: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly optimizer_curves: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
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
