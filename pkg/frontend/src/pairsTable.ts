import type { Pair } from "./types.js";

export interface PairRow {
  index: number;
  u: number;
  v: number;
  world: [number, number, number];
  residualDeg: number | null;
  /** CSS color classifying the residual: green / amber / red. */
  color: string;
}

export const GOOD_DEG = 0.5;
export const WARN_DEG = 1.2;

export function residualColor(residualDeg: number | null): string {
  if (residualDeg === null) return "#999999";
  if (residualDeg < GOOD_DEG) return "#2e7d32";
  if (residualDeg <= WARN_DEG) return "#f9a825";
  return "#c62828";
}

/**
 * Table model: pairs joined with the residuals from the last optimize.
 * Residual order follows pair order; missing entries (pairs added after the
 * last optimize) show as unknown.
 */
export function pairRows(pairs: Pair[], residualsDeg: number[] | null): PairRow[] {
  return pairs.map((p, i) => {
    const r = residualsDeg && i < residualsDeg.length ? residualsDeg[i] : null;
    return {
      index: i,
      u: p.u,
      v: p.v,
      world: p.world,
      residualDeg: r,
      color: residualColor(r),
    };
  });
}
