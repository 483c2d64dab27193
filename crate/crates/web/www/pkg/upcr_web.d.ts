/* tslint:disable */
/* eslint-disable */

/**
 * A generated source/target pair with its ground-truth transform.
 */
export class Pair {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    gt(): Float64Array;
    source(): Float64Array;
    target(): Float64Array;
}

export function apply(transform: Float64Array, cloud: Float64Array): Float64Array;

/**
 * Draws a pair of the given category under the `modelnet` or `7scenes`
 * pose regime.
 */
export function generate_pair(category: number, seed: number, n_points: number, regime: string, partial: boolean, noisy: boolean): Pair;

/**
 * Moves `cloud` by the given Euler angles (degrees) plus a fixed shift and
 * returns `[max descriptor change, max coordinate change]` for the feature
 * kind: descriptors stay put while the coordinates move.
 */
export function invariance_check(cloud: Float64Array, alpha: number, beta: number, gamma: number, feature: string): Float64Array;

/**
 * Registers `source` onto `target` with identity-initialised ICP (`icp`)
 * or ICP started from PFH feature matches (`icp+pfh`).
 */
export function register(source: Float64Array, target: Float64Array, method: string): Float64Array;

/**
 * Geodesic angle in degrees between the rotations of two transforms.
 */
export function rotation_error_deg(predicted: Float64Array, truth: Float64Array): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_pair_free: (a: number, b: number) => void;
    readonly apply: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly generate_pair: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly invariance_check: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly pair_gt: (a: number) => [number, number];
    readonly pair_source: (a: number) => [number, number];
    readonly pair_target: (a: number) => [number, number];
    readonly register: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly rotation_error_deg: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
