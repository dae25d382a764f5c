/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_session_free: (a: number, b: number) => void;
export const potential_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const session_advance: (a: number, b: number) => [number, number, number];
export const session_energies: (a: number) => [number, number, number, number];
export const session_equilibrate: (a: number) => [number, number, number, number];
export const session_equilibrium_rgba: (a: number) => [number, number];
export const session_n: (a: number) => number;
export const session_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: bigint) => [number, number, number];
export const session_phi_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
