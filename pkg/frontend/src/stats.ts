/** Closed-form shifted-lognormal evaluation for chart rendering.
 *
 * The client does no statistics of its own beyond evaluating the density
 * and quantile function of the three parameters returned by the service.
 */

import type { DistributionParams } from "./types.js";

/** Inverse standard-normal CDF (Acklam's rational approximation, ~1e-9). */
export function inverseNormalCdf(p: number): number {
  if (!(p > 0 && p < 1)) {
    throw new RangeError(`p must be in (0, 1), got ${p}`);
  }
  const a = [
    -3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2,
    1.38357751867269e2, -3.066479806614716e1, 2.506628277459239,
  ];
  const b = [
    -5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2,
    6.680131188771972e1, -1.328068155288572e1,
  ];
  const c = [
    -7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838,
    -2.549732539343734, 4.374664141464968, 2.938163982698783,
  ];
  const d = [
    7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996,
    3.754408661907416,
  ];
  const pLow = 0.02425;
  let q: number;
  let r: number;
  if (p < pLow) {
    q = Math.sqrt(-2 * Math.log(p));
    return (
      (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
      ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    );
  }
  if (p <= 1 - pLow) {
    q = p - 0.5;
    r = q * q;
    return (
      ((((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q) /
      (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)
    );
  }
  q = Math.sqrt(-2 * Math.log(1 - p));
  return -(
    (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
    ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
  );
}

const SQRT_2PI = Math.sqrt(2 * Math.PI);

export function quantile(params: DistributionParams, p: number): number {
  const sdlog = Math.max(params.sdlog, 1e-12);
  return params.offset + Math.exp(params.meanlog + sdlog * inverseNormalCdf(p));
}

/** Density of the shifted lognormal at x (0 at or below the offset). */
export function density(params: DistributionParams, x: number): number {
  const excess = x - params.offset;
  if (excess <= 0) return 0;
  const sdlog = Math.max(params.sdlog, 1e-12);
  const z = (Math.log(excess) - params.meanlog) / sdlog;
  const value = Math.exp(-0.5 * z * z) / (excess * sdlog * SQRT_2PI);
  return Number.isFinite(value) ? value : 0;
}

export interface CurvePoint {
  x: number;
  y: number;
}

export const CURVE_POINTS = 200;

/**
 * Density curve at CURVE_POINTS log-spaced abscissae from offset+epsilon to
 * the 99.5% quantile. Purely presentational.
 */
export function densityCurve(params: DistributionParams, nPoints = CURVE_POINTS): CurvePoint[] {
  const upper = quantile(params, 0.995) - params.offset;
  const lower = upper * 1e-4;
  const logLower = Math.log(lower);
  const step = (Math.log(upper) - logLower) / (nPoints - 1);
  const points: CurvePoint[] = [];
  for (let i = 0; i < nPoints; i++) {
    const excess = Math.exp(logLower + i * step);
    const x = params.offset + excess;
    points.push({ x, y: density(params, x) });
  }
  return points;
}
