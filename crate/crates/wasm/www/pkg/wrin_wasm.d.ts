/* tslint:disable */
/* eslint-disable */

export function builtinNetworks(): string;

export function networkSummary(name: string, side: number): string;

export function nmsKeep(boxes_json: string, threshold: number): string;

export function priorBoxes(grid: number, scale: number, next_scale: number, ratios: Float64Array): string;

export function randomBoxes(seed: number, n: number): string;

export function unitCost(channels: number): string;

export function unitNodes(variant: string, channels: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly builtinNetworks: () => [number, number];
    readonly networkSummary: (a: number, b: number, c: number) => [number, number, number, number];
    readonly nmsKeep: (a: number, b: number, c: number) => [number, number, number, number];
    readonly priorBoxes: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly randomBoxes: (a: number, b: number) => [number, number];
    readonly unitCost: (a: number) => [number, number, number, number];
    readonly unitNodes: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
