/* tslint:disable */
/* eslint-disable */

/**
 * Spikes and weight changes of one sleep phase.
 */
export class SleepRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Histogram counts of the input→hidden weight change.
     */
    diff_counts(): Uint32Array;
    diff_hi(): number;
    diff_lo(): number;
    diff_mean(): number;
    duration(): number;
    /**
     * Row-major `duration × n_hidden`, 1 where a hidden unit spiked.
     */
    hidden_raster(): Uint8Array;
    n_hidden(): number;
    /**
     * Row-major `duration × 10`.
     */
    output_raster(): Uint8Array;
}

export function ga_sphere(population: number, max_generations: number, seed: bigint): Float64Array;

export function relaxation_curve(hidden: number, steps: number, dt: number, gamma: number, seed: bigint): Float64Array;

export function sleep_raster(n_hidden: number, duration: number, scale: number, threshold: number, inc: number, dec: number, seed: bigint, bins: number): SleepRun;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_sleeprun_free: (a: number, b: number) => void;
    readonly ga_sphere: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly relaxation_curve: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly sleep_raster: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint, h: number) => [number, number, number];
    readonly sleeprun_diff_counts: (a: number) => [number, number];
    readonly sleeprun_diff_hi: (a: number) => number;
    readonly sleeprun_diff_lo: (a: number) => number;
    readonly sleeprun_diff_mean: (a: number) => number;
    readonly sleeprun_duration: (a: number) => number;
    readonly sleeprun_hidden_raster: (a: number) => [number, number];
    readonly sleeprun_n_hidden: (a: number) => number;
    readonly sleeprun_output_raster: (a: number) => [number, number];
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
