/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_sleeprun_free: (a: number, b: number) => void;
export const ga_sphere: (a: number, b: number, c: bigint) => [number, number, number, number];
export const relaxation_curve: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const sleep_raster: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint, h: number) => [number, number, number];
export const sleeprun_diff_counts: (a: number) => [number, number];
export const sleeprun_diff_hi: (a: number) => number;
export const sleeprun_diff_lo: (a: number) => number;
export const sleeprun_diff_mean: (a: number) => number;
export const sleeprun_duration: (a: number) => number;
export const sleeprun_hidden_raster: (a: number) => [number, number];
export const sleeprun_n_hidden: (a: number) => number;
export const sleeprun_output_raster: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
