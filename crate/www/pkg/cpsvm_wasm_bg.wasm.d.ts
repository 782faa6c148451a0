/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_boundary_free: (a: number, b: number) => void;
export const boundary_add_point: (a: number, b: number, c: number) => [number, number, number, number];
export const boundary_grid: (a: number, b: number) => [number, number, number, number];
export const boundary_new: (a: number, b: number) => [number, number, number];
export const boundary_point_count: (a: number) => number;
export const boundary_point_sets: (a: number) => [number, number];
export const boundary_points: (a: number) => [number, number];
export const boundary_rho: (a: number) => number;
export const drift_stream: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const optimizer_curves: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
