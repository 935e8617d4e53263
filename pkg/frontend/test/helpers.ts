import type { AggregateStats, PredictResponse } from "../src/types.js";

export function mockResponse(overrides: Partial<PredictResponse> = {}): PredictResponse {
  const levels = [0.1, 0.25, 0.5, 0.75, 0.8, 0.85, 0.9, 0.95, 0.98];
  const meanlog = Math.log(50);
  const sdlog = Math.log(2);
  const offset = 10;
  return {
    levels,
    quantiles: levels.map((p) => offset + Math.exp(meanlog + sdlog * zOf(p))),
    params: { meanlog, sdlog, offset },
    exceedance: { "100": 0.15, "300": 0.02, "600": 0.004, "1000": 0.001 },
    predictors: { soil_radon: 40.2, floor: 0 },
    diagnostics: { dropped_fit_levels: 0 },
    ...overrides,
  };
}

// coarse standard-normal quantiles are fine for fixtures
function zOf(p: number): number {
  const table: Record<string, number> = {
    "0.1": -1.2816, "0.25": -0.6745, "0.5": 0, "0.75": 0.6745,
    "0.8": 0.8416, "0.85": 1.0364, "0.9": 1.2816, "0.95": 1.6449, "0.98": 2.0537,
  };
  return table[String(p)];
}

export function mockAggregate(overrides: Partial<AggregateStats> = {}): AggregateStats {
  return {
    key: "01001001",
    level: "municipality",
    n_samples: 5000,
    population: 500,
    am: 63.2,
    sd: 40.1,
    gm: 41.5,
    gsd: 2.27,
    percentiles: { "0.5": 36.0, "0.9": 115.0, "0.95": 180.0, "0.99": 350.0 },
    exceedance: { "100": 0.125, "300": 0.022, "600": 0.0067, "1000": 0.0025 },
    ...overrides,
  };
}
