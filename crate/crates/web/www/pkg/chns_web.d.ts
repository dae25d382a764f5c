/* tslint:disable */
/* eslint-disable */

export class Session {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Advances `steps` time steps and returns the new time.
     */
    advance(steps: number): number;
    energies(): Float64Array;
    equilibrate(): Float64Array;
    /**
     * Image of the last stationary state, empty before `equilibrate`.
     */
    equilibrium_rgba(): Uint8Array;
    n(): number;
    /**
     * `scenario` is `spinodal`, `droplet` or `drift`.
     */
    constructor(scenario: string, n: number, length: number, chi: number, alpha: number, beta: number, c0: number, dt: number, seed: bigint);
    phi_rgba(): Uint8Array;
}

/**
 * Interleaved samples `r, Ψ(r), Ψ'(r)` on the open interval for the
 * logarithmic well or on `[−1.5, 1.5]` for the quartic one.
 */
export function potential_curve(kind: string, theta: number, theta0: number, samples: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly potential_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly session_advance: (a: number, b: number) => [number, number, number];
    readonly session_energies: (a: number) => [number, number, number, number];
    readonly session_equilibrate: (a: number) => [number, number, number, number];
    readonly session_equilibrium_rgba: (a: number) => [number, number];
    readonly session_n: (a: number) => number;
    readonly session_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: bigint) => [number, number, number];
    readonly session_phi_rgba: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
