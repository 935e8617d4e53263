/** DOM wiring for the what-if exploration app. */

import { HttpApi } from "./api.js";
import { compareFloors, createCard, ScenarioCard, submitCard } from "./cards.js";
import { aggregatePanel, renderAggregateHtml, renderCardHtml } from "./render.js";
import { AGE_CLASSES, ApiError, BUILDING_TYPES, PredictRequest } from "./types.js";

declare global {
  interface Window {
    RADONEST_API?: string;
  }
}

const PRESETS: Record<string, { x: number; y: number }> = {
  "center": { x: 100_000, y: 100_000 },
  "north-west": { x: 30_000, y: 170_000 },
  "south-east": { x: 170_000, y: 30_000 },
};

const baseUrl =
  window.RADONEST_API ??
  localStorage.getItem("radonest_api") ??
  "http://127.0.0.1:8000";
const api = new HttpApi(baseUrl);

const cards: ScenarioCard[] = [];

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function fillSelect(select: HTMLSelectElement, values: readonly string[]): void {
  for (const v of values) {
    const option = document.createElement("option");
    option.value = v;
    option.textContent = v.replace(/_/g, " ");
    select.appendChild(option);
  }
}

function readRequest(): PredictRequest {
  return {
    x: parseFloat(byId<HTMLInputElement>("input-x").value),
    y: parseFloat(byId<HTMLInputElement>("input-y").value),
    floor: parseInt(byId<HTMLInputElement>("input-floor").value, 10),
    age_class: byId<HTMLSelectElement>("input-age").value,
    building_type: byId<HTMLSelectElement>("input-type").value,
    living_units: parseInt(byId<HTMLInputElement>("input-units").value, 10),
  };
}

function redraw(): void {
  byId("cards").innerHTML = cards.map((c) => renderCardHtml(c)).join("");
}

async function addCard(label: string): Promise<void> {
  const card = createCard(label, readRequest());
  cards.unshift(card);
  redraw();
  await submitCard(card, api);
  redraw();
}

async function addFloorComparison(): Promise<void> {
  const base = readRequest();
  const floors = parseInt(byId<HTMLInputElement>("input-topfloor").value, 10);
  const batch = compareFloors(base, floors);
  cards.unshift(...batch);
  redraw();
  await Promise.all(batch.map((card) => submitCard(card, api)));
  redraw();
}

async function lookupAggregate(): Promise<void> {
  const key = byId<HTMLInputElement>("input-ags").value.trim();
  const target = byId("aggregate-panel");
  try {
    const stats = await api.aggregate(key === "" ? "national" : key);
    target.innerHTML = renderAggregateHtml(aggregatePanel(key, stats));
  } catch (error) {
    const code = error instanceof ApiError ? error.code : undefined;
    target.innerHTML = renderAggregateHtml(aggregatePanel(key, null, code));
  }
}

function init(): void {
  fillSelect(byId<HTMLSelectElement>("input-age"), AGE_CLASSES);
  fillSelect(byId<HTMLSelectElement>("input-type"), BUILDING_TYPES);
  const presets = byId<HTMLSelectElement>("input-preset");
  fillSelect(presets, Object.keys(PRESETS));
  presets.addEventListener("change", () => {
    const preset = PRESETS[presets.value];
    if (preset) {
      byId<HTMLInputElement>("input-x").value = String(preset.x);
      byId<HTMLInputElement>("input-y").value = String(preset.y);
    }
  });
  const predictButton = byId<HTMLButtonElement>("button-predict");
  predictButton.addEventListener("click", async () => {
    predictButton.disabled = true; // one in-flight request per click
    try {
      await addCard(byId<HTMLInputElement>("input-label").value || "scenario");
    } finally {
      predictButton.disabled = false;
    }
  });
  byId<HTMLButtonElement>("button-floors").addEventListener("click", () => {
    void addFloorComparison();
  });
  byId<HTMLButtonElement>("button-lookup").addEventListener("click", () => {
    void lookupAggregate();
  });
  byId("api-url").textContent = baseUrl;
}

init();
