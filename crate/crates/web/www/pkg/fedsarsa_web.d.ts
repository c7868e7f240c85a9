/* tslint:disable */
/* eslint-disable */

/**
 * Norm of the heterogeneity drift at `theta*` for `H = 1, 2, 4, ...` up
 * to `max_local_steps`.
 */
export function drift_curve(env_seed: number, step_size: number, max_local_steps: number): string;

/**
 * Agent-averaged gap between local and federated fixed points over the
 * `(eps_p, eps_r)` grid `{0, 0.1, 0.5, 1}^2`.
 */
export function heterogeneity_grid(env_seed: number): string;

/**
 * One FedSARSA run on the admitted Garnet pair, logged at about 400
 * points.
 */
export function simulate(env_seed: number, n_agents: number, local_steps: number, rounds: number, step_size: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly drift_curve: (a: number, b: number, c: number) => [number, number];
    readonly heterogeneity_grid: (a: number) => [number, number];
    readonly simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
