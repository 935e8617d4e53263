/** Scenario cards: a request plus its last good response.
 *
 * Each card tracks a monotone request sequence number; a response is applied
 * only if it belongs to the most recently issued request, so out-of-order
 * resolutions can never overwrite newer state. On API errors the card keeps
 * its last good response and surfaces the error inline.
 */

import type { Api } from "./api.js";
import { ApiError, PredictRequest, PredictResponse } from "./types.js";

export interface ScenarioCard {
  id: string;
  label: string;
  request: PredictRequest;
  response: PredictResponse | null;
  error: string | null;
  pending: boolean;
  seq: number;
}

let nextId = 0;

export function createCard(label: string, request: PredictRequest): ScenarioCard {
  nextId += 1;
  return {
    id: `card-${nextId}`,
    label,
    request,
    response: null,
    error: null,
    pending: false,
    seq: 0,
  };
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.code}: ${error.message}`;
  if (error instanceof Error) return error.message;
  return String(error);
}

/**
 * Issue the card's request. Re-submitting supersedes any in-flight request:
 * the older response is discarded when it arrives.
 */
export async function submitCard(card: ScenarioCard, api: Api): Promise<void> {
  card.seq += 1;
  const seq = card.seq;
  card.pending = true;
  try {
    const response = await api.predict(card.request);
    if (seq !== card.seq) return; // stale response, a newer request exists
    card.response = response;
    card.error = null;
  } catch (error) {
    if (seq !== card.seq) return;
    card.error = describe(error); // keep the last good response visible
  } finally {
    if (seq === card.seq) card.pending = false;
  }
}

export function floorLabel(floor: number): string {
  if (floor === -1) return "Basement";
  if (floor === 0) return "Ground floor";
  return `Floor ${floor}`;
}

/**
 * One card per floor from the basement (-1) to the top floor, basement
 * first: floors + 1 cards for a building with `floors` above-ground levels.
 */
export function compareFloors(base: PredictRequest, floors: number): ScenarioCard[] {
  if (floors < 1) throw new RangeError("building needs at least one floor");
  const cards: ScenarioCard[] = [];
  for (let floor = -1; floor < floors; floor++) {
    cards.push(createCard(floorLabel(floor), { ...base, floor }));
  }
  return cards;
}
