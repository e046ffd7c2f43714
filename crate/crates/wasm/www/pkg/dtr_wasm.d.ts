/* tslint:disable */
/* eslint-disable */

/**
 * Mean median survival over `reps` rollouts for monthly, quarterly and
 * semiannual visits and for the intensity policy. All four share random
 * numbers. Returns JSON.
 */
export function compareSchedules(nu1: number, nu2: number, mu: number, sigma_d2: number, x: Float64Array, y0: number, reps: number, seed: bigint): string;

/**
 * Visit intensity λ(t) after a visit with lab `y`, on `points` evenly
 * spaced elapsed times in (0, horizon].
 */
export function intensityCurve(nu1: number, nu2: number, mu: number, y: number, horizon: number, points: number): Float64Array;

/**
 * One simulated patient under the given policy. `x` are the standardized
 * donor age, DGF indicator and BMI. Returns JSON.
 */
export function simulatePatient(nu1: number, nu2: number, mu: number, sigma_d2: number, x: Float64Array, y0: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compareSchedules: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: bigint) => [number, number, number, number];
    readonly intensityCurve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly simulatePatient: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
