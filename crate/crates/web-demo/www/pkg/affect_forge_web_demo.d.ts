/* tslint:disable */
/* eslint-disable */

/**
 * A rendered 10×10 chunk.
 */
export class ChunkView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly ascii: string;
    /**
     * Pixels ready for `ImageData`.
     */
    readonly rgba: Uint8Array;
    /**
     * Image width and height in pixels.
     */
    readonly side: number;
    /**
     * First level column covered by the chunk.
     */
    readonly start: number;
}

/**
 * The chunk a data point at column `x` would see.
 */
export function chunk_view(level_text: string, x: number, scale: number): ChunkView;

/**
 * Rank prediction for the point at column `x` with an empty play log.
 * An empty `weights` buffer uses a freshly initialised model.
 */
export function predict(level_text: string, x: number, weights: Uint8Array, seed: bigint): string;

/**
 * Spearman's rho with p-value and 95% interval, as JSON.
 */
export function spearman(xs: string, ys: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_chunkview_free: (a: number, b: number) => void;
    readonly chunk_view: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly chunkview_ascii: (a: number) => [number, number];
    readonly chunkview_rgba: (a: number) => [number, number];
    readonly chunkview_side: (a: number) => number;
    readonly chunkview_start: (a: number) => number;
    readonly predict: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly spearman: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
