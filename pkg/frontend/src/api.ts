/** Typed client for the prediction service. */

import { AggregateStats, ApiError, PredictRequest, PredictResponse } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface Api {
  predict(request: PredictRequest): Promise<PredictResponse>;
  aggregate(key: string): Promise<AggregateStats>;
}

async function raiseForStatus(response: Response): Promise<never> {
  let code = "http_error";
  let message = `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the generic message
  }
  throw new ApiError(response.status, code, message);
}

export class HttpApi implements Api {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  async predict(request: PredictRequest): Promise<PredictResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}/predict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) await raiseForStatus(response);
    return (await response.json()) as PredictResponse;
  }

  async aggregate(key: string): Promise<AggregateStats> {
    const response = await this.fetchImpl(`${this.baseUrl}/aggregates/${key}`);
    if (!response.ok) await raiseForStatus(response);
    return (await response.json()) as AggregateStats;
  }
}
