/** Wire types mirroring the prediction service (snake_case JSON fields). */

export interface PredictRequest {
  x: number;
  y: number;
  floor: number;
  age_class: string;
  building_type: string;
  living_units: number;
}

export interface DistributionParams {
  meanlog: number;
  sdlog: number;
  offset: number;
}

export interface PredictResponse {
  levels: number[];
  quantiles: number[];
  params: DistributionParams;
  exceedance: Record<string, number>;
  predictors: Record<string, number | string>;
  diagnostics: { dropped_fit_levels: number };
}

export interface AggregateStats {
  key: string;
  level: string;
  n_samples: number;
  population: number;
  am: number;
  sd: number;
  gm: number;
  gsd: number;
  percentiles: Record<string, number>;
  exceedance: Record<string, number>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export const AGE_CLASSES = [
  "before_1945",
  "1945_1980",
  "1981_1995",
  "1996_2005",
  "2006_later",
  "na",
] as const;

export const BUILDING_TYPES = [
  "single_two_family",
  "row_semi_detached",
  "multi_family",
  "apartment_building",
  "high_rise",
  "terrace_house",
  "farm_house",
  "office_building",
] as const;
