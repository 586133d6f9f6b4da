/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_wdbc_free: (a: number, b: number) => void;
export const cell_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const discharge: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const fitted_behavior: (a: number) => [number, number, number, number];
export const wdbc_new: (a: number, b: number) => [number, number, number];
export const wdbc_surfaces: (a: number, b: number, c: bigint, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
