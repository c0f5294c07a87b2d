/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * AbsRel of the current estimate after affine alignment.
     */
    abs_rel(): number;
    /**
     * Disparity as gray, stretched over the truth's range.
     */
    disparity(which: string): Uint8Array;
    iteration(): number;
    /**
     * `shape` is `"hemisphere"` or `"bump"`; `seed` drives both the
     * initial perturbation and the lighting draws.
     */
    constructor(size: number, shape: string, seed: bigint);
    /**
     * Normal map as RGB `(n + 1) / 2`.
     */
    normals(which: string): Uint8Array;
    /**
     * Re-lit scene under a light at `(x, y)` on the unit disk. `which`
     * selects the disparity: `"truth"`, `"init"` or `"current"`.
     */
    relight(which: string, x: number, y: number, specular: number): Uint8Array;
    reset(): void;
    size(): number;
    /**
     * Runs `n` refinement steps; returns the smoothness term of the last.
     */
    step(n: number): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_abs_rel: (a: number) => [number, number, number];
    readonly demo_disparity: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_iteration: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly demo_normals: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_relight: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demo_reset: (a: number) => [number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_step: (a: number, b: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
