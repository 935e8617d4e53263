/** View models and HTML for cards and the aggregate panel.
 *
 * Every number shown is traceable to a PredictResponse / AggregateStats; the
 * only client-side computation is the closed-form density curve.
 */

import { CurvePoint, densityCurve } from "./stats.js";
import type { AggregateStats, PredictResponse } from "./types.js";

export interface QuantileRow {
  level: string;
  value: number;
}

export function quantileTableRows(response: PredictResponse): QuantileRow[] {
  return response.levels.map((p, i) => ({
    level: `${Math.round(p * 100)}%`,
    value: response.quantiles[i],
  }));
}

export type RiskBand = "low" | "elevated" | "high";

export interface Badge {
  threshold: string;
  probability: number;
  band: RiskBand;
}

export function riskBand(probability: number): RiskBand {
  if (probability >= 0.1) return "high";
  if (probability >= 0.01) return "elevated";
  return "low";
}

export function exceedanceBadges(
  response: PredictResponse,
  thresholds: string[] = ["100", "300"],
): Badge[] {
  return thresholds.map((threshold) => {
    const probability = response.exceedance[threshold] ?? 0;
    return { threshold, probability, band: riskBand(probability) };
  });
}

export function curveForResponse(response: PredictResponse): CurvePoint[] {
  return densityCurve(response.params);
}

/** Level tag derived from the key's prefix length (8/5/2 digits, else national). */
export function levelFromKey(key: string): string {
  switch (key.length) {
    case 8:
      return "municipality";
    case 5:
      return "district";
    case 2:
      return "state";
    default:
      return "national";
  }
}

export interface AggregatePanel {
  title: string;
  rows: { name: string; value: string }[];
  message: string | null;
}

const NO_DATA_MESSAGE = "no data (population below threshold)";

export function aggregatePanel(
  key: string,
  stats: AggregateStats | null,
  errorCode?: string,
): AggregatePanel {
  const title = `${key || "national"} (${levelFromKey(key)})`;
  if (stats === null) {
    const message =
      errorCode === "below_population_threshold"
        ? NO_DATA_MESSAGE
        : `lookup failed${errorCode ? ` (${errorCode})` : ""}`;
    return { title, rows: [], message };
  }
  const fmt = (v: number, digits = 1) => v.toFixed(digits);
  const rows = [
    { name: "arithmetic mean", value: `${fmt(stats.am)} Bq/m³` },
    { name: "standard deviation", value: `${fmt(stats.sd)} Bq/m³` },
    { name: "geometric mean", value: `${fmt(stats.gm)} Bq/m³` },
    { name: "geometric SD", value: fmt(stats.gsd, 2) },
  ];
  for (const [p, v] of Object.entries(stats.percentiles)) {
    rows.push({ name: `${Math.round(parseFloat(p) * 100)}th percentile`, value: `${fmt(v)} Bq/m³` });
  }
  for (const [t, v] of Object.entries(stats.exceedance)) {
    rows.push({ name: `P(> ${t} Bq/m³)`, value: `${(v * 100).toFixed(2)} %` });
  }
  rows.push({ name: "population", value: fmt(stats.population, 0) });
  return { title, rows, message: null };
}

// ---------------------------------------------------------------------------
// HTML
// ---------------------------------------------------------------------------

function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Polyline for an SVG viewport; width/height in viewBox units. */
export function curvePath(points: CurvePoint[], width = 320, height = 120): string {
  if (points.length === 0) return "";
  const xMin = points[0].x;
  const xMax = points[points.length - 1].x;
  const yMax = Math.max(...points.map((p) => p.y), Number.MIN_VALUE);
  const coords = points.map((p) => {
    const px = ((p.x - xMin) / (xMax - xMin || 1)) * width;
    const py = height - (p.y / yMax) * (height - 4);
    return `${px.toFixed(2)},${py.toFixed(2)}`;
  });
  return `M${coords.join(" L")}`;
}

export function renderCardHtml(card: {
  label: string;
  response: PredictResponse | null;
  error: string | null;
  pending: boolean;
}): string {
  const parts: string[] = [`<h3>${escapeHtml(card.label)}</h3>`];
  if (card.pending) parts.push(`<p class="pending">loading…</p>`);
  if (card.error) parts.push(`<p class="error">${escapeHtml(card.error)}</p>`);
  const response = card.response;
  if (response) {
    const badges = exceedanceBadges(response)
      .map(
        (b) =>
          `<span class="badge badge-${b.band}">&gt;${b.threshold} Bq/m³: ` +
          `${(b.probability * 100).toFixed(1)}%</span>`,
      )
      .join(" ");
    parts.push(`<div class="badges">${badges}</div>`);
    const rows = quantileTableRows(response)
      .map((r) => `<tr><td>${r.level}</td><td>${r.value.toFixed(1)}</td></tr>`)
      .join("");
    parts.push(
      `<table class="quantiles"><thead><tr><th>percentile</th>` +
        `<th>Bq/m³</th></tr></thead><tbody>${rows}</tbody></table>`,
    );
    const path = curvePath(curveForResponse(response));
    parts.push(
      `<svg class="density" viewBox="0 0 320 120" preserveAspectRatio="none">` +
        `<path d="${path}" fill="none" stroke="currentColor"/></svg>`,
    );
    const { meanlog, sdlog, offset } = response.params;
    parts.push(
      `<p class="params">meanlog ${meanlog.toFixed(3)}, sdlog ${sdlog.toFixed(3)}, ` +
        `offset ${offset.toFixed(1)} Bq/m³` +
        (response.diagnostics.dropped_fit_levels
          ? `, ${response.diagnostics.dropped_fit_levels} fit level(s) dropped`
          : "") +
        `</p>`,
    );
  }
  return `<article class="card">${parts.join("")}</article>`;
}

export function renderAggregateHtml(panel: AggregatePanel): string {
  const parts = [`<h3>${escapeHtml(panel.title)}</h3>`];
  if (panel.message) {
    parts.push(`<p class="message">${escapeHtml(panel.message)}</p>`);
  } else {
    const rows = panel.rows
      .map((r) => `<tr><td>${escapeHtml(r.name)}</td><td>${escapeHtml(r.value)}</td></tr>`)
      .join("");
    parts.push(`<table class="aggregate"><tbody>${rows}</tbody></table>`);
  }
  return parts.join("");
}
