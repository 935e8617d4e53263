import { describe, expect, it } from "vitest";

import { HttpApi } from "../src/api.js";
import { ApiError } from "../src/types.js";
import { mockAggregate, mockResponse } from "./helpers.js";

function fakeFetch(status: number, body: unknown) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const impl = async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { impl, calls };
}

const REQUEST = {
  x: 1.0,
  y: 2.0,
  floor: -1,
  age_class: "na",
  building_type: "multi_family",
  living_units: 3,
};

describe("HttpApi", () => {
  it("posts predict requests and parses the response", async () => {
    const { impl, calls } = fakeFetch(200, mockResponse());
    const api = new HttpApi("http://api.test", impl);
    const response = await api.predict(REQUEST);
    expect(calls[0].url).toBe("http://api.test/predict");
    expect(calls[0].init?.method).toBe("POST");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual(REQUEST);
    expect(response.quantiles).toHaveLength(9);
  });

  it("maps service errors to ApiError with the service code", async () => {
    const { impl } = fakeFetch(422, {
      code: "outside_coverage",
      message: "no soil_radon coverage at (1, 2)",
      detail: null,
    });
    const api = new HttpApi("http://api.test", impl);
    await expect(api.predict(REQUEST)).rejects.toThrowError(ApiError);
    await expect(api.predict(REQUEST)).rejects.toMatchObject({
      status: 422,
      code: "outside_coverage",
    });
  });

  it("fetches aggregates by key", async () => {
    const { impl, calls } = fakeFetch(200, mockAggregate());
    const api = new HttpApi("http://api.test", impl);
    const stats = await api.aggregate("01001001");
    expect(calls[0].url).toBe("http://api.test/aggregates/01001001");
    expect(stats.level).toBe("municipality");
  });

  it("propagates 404 suppression codes", async () => {
    const { impl } = fakeFetch(404, {
      code: "below_population_threshold",
      message: "statistics for '02002004' suppressed (n=120 samples)",
      detail: null,
    });
    const api = new HttpApi("http://api.test", impl);
    await expect(api.aggregate("02002004")).rejects.toMatchObject({
      status: 404,
      code: "below_population_threshold",
    });
  });
});
