/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_breakdown_free: (a: number, b: number) => void;
export const __wbg_get_breakdown_aux_ce: (a: number) => number;
export const __wbg_get_breakdown_main_ce: (a: number) => number;
export const __wbg_get_breakdown_reverse_guidance: (a: number) => number;
export const __wbg_get_breakdown_shape_regularization: (a: number) => number;
export const __wbg_get_breakdown_total: (a: number) => number;
export const __wbg_set_breakdown_aux_ce: (a: number, b: number) => void;
export const __wbg_set_breakdown_main_ce: (a: number, b: number) => void;
export const __wbg_set_breakdown_reverse_guidance: (a: number, b: number) => void;
export const __wbg_set_breakdown_shape_regularization: (a: number, b: number) => void;
export const __wbg_set_breakdown_total: (a: number, b: number) => void;
export const lossBreakdown: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number) => [number, number, number];
export const rankedShape: (a: number, b: number) => [number, number, number, number];
export const rankedVariance: (a: number, b: number, c: number) => [number, number, number];
export const soften: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
