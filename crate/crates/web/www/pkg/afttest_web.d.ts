/* tslint:disable */
/* eslint-disable */

/**
 * The bundled PBC table (complete cases, with a `log_bili` column) as CSV text.
 */
export function pbc_csv(): string;

/**
 * Simulates one AFT sample (Uniform(0,1) covariates, N(0,1) errors,
 * uniform censoring) and tests it.
 *
 * `misspec` is `none`, `quadratic` (adds `strength · Z₁²`) or `loglink`.
 */
export function simulate_and_test(n: number, censor_rate: number, misspec: string, strength: number, test_type: string, npath: number, seed: bigint, standardized: boolean): string;

/**
 * Runs a test on CSV text with a `Surv(time, status) ~ ...` formula.
 * `cov_tested` is a covariate name or 1-based index (functional form test only).
 */
export function test_csv(csv_text: string, formula: string, test_type: string, cov_tested: string, npath: number, seed: bigint, standardized: boolean, fitted_index_link: boolean): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly pbc_csv: () => [number, number];
    readonly simulate_and_test: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: bigint, j: number) => [number, number];
    readonly test_csv: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: bigint, k: number, l: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
