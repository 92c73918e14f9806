/** Latent sampling and interpolation helpers. Sampling takes an injectable
 *  uniform source so tests stay deterministic. */

export type UniformSource = () => number;

/** Standard normal via Box-Muller. */
export function sampleLatent(dim: number, uniform: UniformSource = Math.random): number[] {
  const out: number[] = [];
  while (out.length < dim) {
    const u = Math.max(uniform(), Number.MIN_VALUE);
    const v = uniform();
    const r = Math.sqrt(-2 * Math.log(u));
    out.push(r * Math.cos(2 * Math.PI * v));
    if (out.length < dim) out.push(r * Math.sin(2 * Math.PI * v));
  }
  return out.slice(0, dim);
}

export function sampleNoiseSeed(uniform: UniformSource = Math.random): number {
  return Math.floor(uniform() * 2 ** 31);
}

export function lerpLatent(a: number[], b: number[], alpha: number): number[] {
  if (a.length !== b.length) throw new Error("latent dims differ");
  return a.map((v, i) => (1 - alpha) * v + alpha * b[i]);
}

/** Monotone alpha grid 0, 1/(k-1), ..., 1. */
export function alphaGrid(frames: number): number[] {
  if (frames < 2) throw new Error("need at least 2 frames");
  return Array.from({ length: frames }, (_, k) => k / (frames - 1));
}

/** Deterministic uniform source for tests (mulberry32). */
export function seededUniform(seed: number): UniformSource {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
