/* tslint:disable */
/* eslint-disable */

/**
 * Loss terms for one sample, computed by the same batch objective the trainer uses.
 */
export class Breakdown {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    aux_ce: number;
    main_ce: number;
    reverse_guidance: number;
    shape_regularization: number;
    total: number;
}

export function lossBreakdown(main: Float64Array, aux: Float64Array, previous: Float64Array, label: number, alpha: number, beta: number, tau_drg: number, tau_dsr: number): Breakdown;

export function rankedShape(logits: Float64Array): Float64Array;

export function rankedVariance(flat: Float64Array, classes: number): number;

export function soften(logits: Float64Array, tau: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_breakdown_free: (a: number, b: number) => void;
    readonly __wbg_get_breakdown_aux_ce: (a: number) => number;
    readonly __wbg_get_breakdown_main_ce: (a: number) => number;
    readonly __wbg_get_breakdown_reverse_guidance: (a: number) => number;
    readonly __wbg_get_breakdown_shape_regularization: (a: number) => number;
    readonly __wbg_get_breakdown_total: (a: number) => number;
    readonly __wbg_set_breakdown_aux_ce: (a: number, b: number) => void;
    readonly __wbg_set_breakdown_main_ce: (a: number, b: number) => void;
    readonly __wbg_set_breakdown_reverse_guidance: (a: number, b: number) => void;
    readonly __wbg_set_breakdown_shape_regularization: (a: number, b: number) => void;
    readonly __wbg_set_breakdown_total: (a: number, b: number) => void;
    readonly lossBreakdown: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number) => [number, number, number];
    readonly rankedShape: (a: number, b: number) => [number, number, number, number];
    readonly rankedVariance: (a: number, b: number, c: number) => [number, number, number];
    readonly soften: (a: number, b: number, c: number) => [number, number, number, number];
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
