/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_chunkview_free: (a: number, b: number) => void;
export const chunk_view: (a: number, b: number, c: number, d: number) => [number, number, number];
export const chunkview_ascii: (a: number) => [number, number];
export const chunkview_rgba: (a: number) => [number, number];
export const chunkview_side: (a: number) => number;
export const chunkview_start: (a: number) => number;
export const predict: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const spearman: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
