/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_pair_free: (a: number, b: number) => void;
export const apply: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const generate_pair: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const invariance_check: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const pair_gt: (a: number) => [number, number];
export const pair_source: (a: number) => [number, number];
export const pair_target: (a: number) => [number, number];
export const register: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const rotation_error_deg: (a: number, b: number, c: number, d: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
