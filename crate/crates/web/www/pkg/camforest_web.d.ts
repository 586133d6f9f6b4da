/* tslint:disable */
/* eslint-disable */

/**
 * Hard and soft trees on the three breast-cancer features, ready to be
 * perturbed and drawn.
 */
export class Wdbc {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Train the depth-3 tree and its soft version. Takes a second or two.
     */
    constructor(k: number, epochs: number);
    /**
     * Malignant-score surfaces over mean concave points × worst area, with
     * worst texture at its training mean, after adding threshold variation
     * of `sigma` volts (gaussian) to both arrays. Accuracies are on the test
     * split under the same perturbation.
     */
    surfaces(sigma: number, seed: bigint, resolution: number): string;
}

/**
 * Probability of one cell storing `threshold` as inputs sweep [-1, 1]:
 * the sigmoid at gain `k` and the sensed output of the simulated circuit.
 */
export function cell_curve(threshold: number, greater: boolean, k: number, points: number): string;

/**
 * Match-line trace of the reference row with inputs `u` and `v`, plus the
 * sensed value and the behavior-model prediction with parameters `a`, `b`
 * and `k`.
 */
export function discharge(u: number, v: number, a: number, b: number, k: number): string;

/**
 * Behavior parameters fitted to the simulated reference row, as JSON.
 */
export function fitted_behavior(resolution: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_wdbc_free: (a: number, b: number) => void;
    readonly cell_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly discharge: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly fitted_behavior: (a: number) => [number, number, number, number];
    readonly wdbc_new: (a: number, b: number) => [number, number, number];
    readonly wdbc_surfaces: (a: number, b: number, c: bigint, d: number) => [number, number, number, number];
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
