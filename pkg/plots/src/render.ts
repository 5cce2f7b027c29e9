/**
 * Figure renderers driven by a spec file. Every renderer reads artifact
 * files, builds the plotted series, embeds them as JSON metadata inside the
 * SVG (id "plotted-series"), and writes the image. Re-rendering identical
 * inputs yields identical plotted data.
 */

import fs from "node:fs";
import path from "node:path";

import {
  MetricEntry,
  PredictiveTable,
  SchemaMismatch,
  column,
  findMetric,
  readMetricsJson,
  readPredictiveCsv,
  readSweepJson,
} from "./schema.js";
import { DEFAULT_MARGIN, LinearScale, Svg, drawAxes } from "./svg.js";

export const SERIES_ID = "plotted-series";

export interface ConstraintOverlay {
  x: [number, number];
  y?: [number, number];          // omitted: shade the whole vertical band
  forbidden?: boolean;           // red for forbidden, green for permitted
  label?: string;
}

export interface PlotSpec {
  kind: "band_1d" | "region_2d" | "rejection_curve" | "fairness_bar";
  inputs: {
    predictive?: string;
    metrics?: string[];
    sweep?: string;
    baseline_rate?: number;
  };
  output: string;
  title?: string;
  constraint_overlay?: ConstraintOverlay[];
  threshold?: number;            // region_2d: minimum class probability to shade
  metric?: string;               // fairness_bar: defaults to group_fractions
  labels?: string[];             // fairness_bar: one per metrics file
  width?: number;
  height?: number;
}

export function loadSpec(specPath: string): PlotSpec {
  const spec = JSON.parse(fs.readFileSync(specPath, "utf-8")) as PlotSpec;
  if (!spec.kind || !spec.output || !spec.inputs) {
    throw new SchemaMismatch("plot spec needs 'kind', 'inputs', and 'output'");
  }
  const base = path.dirname(specPath);
  const resolve = (p?: string) => (p && !path.isAbsolute(p) ? path.join(base, p) : p);
  spec.inputs.predictive = resolve(spec.inputs.predictive);
  spec.inputs.sweep = resolve(spec.inputs.sweep);
  spec.inputs.metrics = spec.inputs.metrics?.map((p) => resolve(p)!);
  if (!path.isAbsolute(spec.output)) spec.output = path.join(base, spec.output);
  return spec;
}

export function render(spec: PlotSpec): string {
  let svgText: string;
  switch (spec.kind) {
    case "band_1d":
      svgText = renderBand1d(spec);
      break;
    case "region_2d":
      svgText = renderRegion2d(spec);
      break;
    case "rejection_curve":
      svgText = renderRejectionCurve(spec);
      break;
    case "fairness_bar":
      svgText = renderFairnessBar(spec);
      break;
    default:
      throw new SchemaMismatch(`unknown plot kind '${(spec as PlotSpec).kind}'`);
  }
  fs.mkdirSync(path.dirname(spec.output), { recursive: true });
  fs.writeFileSync(spec.output, svgText);
  return spec.output;
}

function frame(spec: PlotSpec): { svg: Svg; w: number; h: number } {
  const w = spec.width ?? 560;
  const h = spec.height ?? 360;
  return { svg: new Svg(w, h), w, h };
}

function span(values: number[], pad = 0.05): [number, number] {
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const d = (hi - lo || 1) * pad;
  return [lo - d, hi + d];
}

// ---------------------------------------------------------------------------

function renderBand1d(spec: PlotSpec): string {
  if (!spec.inputs.predictive) {
    throw new SchemaMismatch("band_1d needs inputs.predictive");
  }
  const table = readPredictiveCsv(spec.inputs.predictive);
  const x = column(table, "x_1");
  const lo = column(table, "q2_5");
  const mid = column(table, "q50");
  const hi = column(table, "q97_5");

  const { svg, w, h } = frame(spec);
  const m = DEFAULT_MARGIN;
  const xs = new LinearScale(x[0], x[x.length - 1], m.left, w - m.right);
  const [y0, y1] = span([...lo, ...hi], 0.08);
  const ys = new LinearScale(y1, y0, m.top, h - m.bottom); // inverted for SVG

  for (const overlay of spec.constraint_overlay ?? []) {
    const color = overlay.forbidden === false ? "#2a925033" : "#c8373733";
    const [ox0, ox1] = overlay.x;
    const [oy0, oy1] = overlay.y ?? [y0, y1];
    svg.rect(
      xs.map(ox0),
      ys.map(oy1),
      xs.map(ox1) - xs.map(ox0),
      ys.map(oy0) - ys.map(oy1),
      `fill:${color};stroke:none`,
    );
  }

  const bandPts: Array<[number, number]> = [
    ...x.map((v, i) => [xs.map(v), ys.map(hi[i])] as [number, number]),
    ...[...x].reverse().map((v, i) => {
      const j = x.length - 1 - i;
      return [xs.map(v), ys.map(lo[j])] as [number, number];
    }),
  ];
  svg.path(bandPts, "fill:#4477aa44;stroke:none", true);
  svg.path(
    x.map((v, i) => [xs.map(v), ys.map(mid[i])] as [number, number]),
    "fill:none;stroke:#225588;stroke-width:1.8",
  );
  drawAxes(svg, xs, ys, "input", "output", spec.title ?? "");
  svg.metadata(SERIES_ID, {
    kind: "band_1d",
    x,
    q2_5: lo,
    q50: mid,
    q97_5: hi,
    config_hash: table.configHash ?? null,
  });
  return svg.render();
}

// ---------------------------------------------------------------------------

const CLASS_COLORS = ["#4477aa", "#ee6677", "#2a9250", "#ccbb44", "#aa3377"];

function renderRegion2d(spec: PlotSpec): string {
  if (!spec.inputs.predictive) {
    throw new SchemaMismatch("region_2d needs inputs.predictive");
  }
  const table = readPredictiveCsv(spec.inputs.predictive);
  if (table.inputColumns.length < 2) {
    throw new SchemaMismatch("region_2d needs two input columns");
  }
  const probCols = table.columns.filter((c) => /^p_\d+$/.test(c));
  if (probCols.length === 0) {
    throw new SchemaMismatch("missing column 'p_0'");
  }
  const x1 = column(table, "x_1");
  const x2 = column(table, "x_2");
  const probs = probCols.map((c) => column(table, c));
  const threshold = spec.threshold ?? 0.5;

  const { svg, w, h } = frame(spec);
  const m = DEFAULT_MARGIN;
  const u1 = [...new Set(x1)].sort((a, b) => a - b);
  const u2 = [...new Set(x2)].sort((a, b) => a - b);
  const xs = new LinearScale(u1[0], u1[u1.length - 1], m.left, w - m.right);
  const ys = new LinearScale(u2[u2.length - 1], u2[0], m.top, h - m.bottom);
  const cw = (xs.r1 - xs.r0) / Math.max(u1.length - 1, 1);
  const ch = (ys.r1 - ys.r0) / Math.max(u2.length - 1, 1);

  const winners: number[] = [];
  for (let i = 0; i < table.rows.length; i += 1) {
    let best = 0;
    for (let k = 1; k < probs.length; k += 1) {
      if (probs[k][i] > probs[best][i]) best = k;
    }
    const certain = probs[best][i] >= threshold;
    winners.push(certain ? best : -1);
    if (certain) {
      svg.rect(
        xs.map(x1[i]) - cw / 2,
        ys.map(x2[i]) - ch / 2,
        cw + 0.5,
        ch + 0.5,
        `fill:${CLASS_COLORS[best % CLASS_COLORS.length]}66;stroke:none`,
      );
    }
  }
  for (const overlay of spec.constraint_overlay ?? []) {
    const [ox0, ox1] = overlay.x;
    const [oy0, oy1] = overlay.y ?? [u2[0], u2[u2.length - 1]];
    svg.rect(
      xs.map(ox0),
      ys.map(oy1),
      xs.map(ox1) - xs.map(ox0),
      ys.map(oy0) - ys.map(oy1),
      `fill:none;stroke:${overlay.forbidden ? "#c83737" : "#2a9250"};stroke-width:2`,
    );
  }
  drawAxes(svg, xs, ys, "x_1", "x_2", spec.title ?? "");
  svg.metadata(SERIES_ID, {
    kind: "region_2d",
    threshold,
    n_classes: probs.length,
    winners,
    config_hash: table.configHash ?? null,
  });
  return svg.render();
}

// ---------------------------------------------------------------------------

function renderRejectionCurve(spec: PlotSpec): string {
  if (!spec.inputs.sweep) {
    throw new SchemaMismatch("rejection_curve needs inputs.sweep");
  }
  const sweep = readSweepJson(spec.inputs.sweep);
  const counts = sweep.runs.map((r) => r.value);
  const rates = sweep.runs.map((r) => {
    const rate = r.metrics["rejection_rate"];
    if (typeof rate !== "number") {
      throw new SchemaMismatch("sweep runs carry no 'rejection_rate' metric");
    }
    return rate;
  });

  const { svg, w, h } = frame(spec);
  const m = DEFAULT_MARGIN;
  // anchor counts on a log axis, as in the sweep's design
  const logCounts = counts.map((c) => Math.log10(c));
  const xs = new LinearScale(Math.min(...logCounts), Math.max(...logCounts), m.left, w - m.right);
  const ys = new LinearScale(1.05, -0.05, m.top, h - m.bottom);

  if (typeof spec.inputs.baseline_rate === "number") {
    const py = ys.map(spec.inputs.baseline_rate);
    svg.line(xs.r0, py, xs.r1, py, "stroke:#333;stroke-width:1.5;stroke-dasharray:6 3");
    svg.text(xs.r1 - 4, py - 6, "baseline", "font:10px sans-serif;fill:#333", "end");
  }
  const pts = logCounts.map((lc, i) => [xs.map(lc), ys.map(rates[i])] as [number, number]);
  svg.path(pts, "fill:none;stroke:#225588;stroke-width:1.8");
  for (const [px, py] of pts) svg.circle(px, py, 3.5, "fill:#225588");
  for (let i = 0; i < counts.length; i += 1) {
    svg.text(xs.map(logCounts[i]), ys.r1 + 16, String(counts[i]), "font:10px sans-serif;fill:#333");
  }
  svg.line(xs.r0, ys.r1, xs.r1, ys.r1, "stroke:#333;stroke-width:1");
  svg.line(xs.r0, ys.r0, xs.r0, ys.r1, "stroke:#333;stroke-width:1");
  for (const t of [0, 0.25, 0.5, 0.75, 1.0]) {
    svg.text(xs.r0 - 8, ys.map(t) + 3, String(t), "font:10px sans-serif;fill:#333", "end");
  }
  svg.text((xs.r0 + xs.r1) / 2, ys.r1 + 34, "constraint anchor count (log scale)",
    "font:11px sans-serif;fill:#333");
  svg.text(xs.r0 - 40, ys.r0 - 10, "rejection rate", "font:11px sans-serif;fill:#333", "start");
  if (spec.title) svg.text((xs.r0 + xs.r1) / 2, 18, spec.title, "font:bold 13px sans-serif;fill:#111");
  svg.metadata(SERIES_ID, {
    kind: "rejection_curve",
    counts,
    rates,
    baseline_rate: spec.inputs.baseline_rate ?? null,
    config_hash: sweep.config_hash ?? null,
  });
  return svg.render();
}

// ---------------------------------------------------------------------------

function renderFairnessBar(spec: PlotSpec): string {
  if (!spec.inputs.metrics || spec.inputs.metrics.length === 0) {
    throw new SchemaMismatch("fairness_bar needs inputs.metrics");
  }
  const metricName = spec.metric ?? "group_fractions";
  const groups: Array<{ label: string; g1: number; g0: number; gap: number }> = [];
  spec.inputs.metrics.forEach((p, i) => {
    const doc = readMetricsJson(p);
    const entry: MetricEntry = findMetric(doc, metricName);
    groups.push({
      label: spec.labels?.[i] ?? path.basename(path.dirname(p)),
      g1: entry["fraction_group1"] as number,
      g0: entry["fraction_group0"] as number,
      gap: entry.value,
    });
  });

  const { svg, w, h } = frame(spec);
  const m = DEFAULT_MARGIN;
  const xs = new LinearScale(0, groups.length, m.left, w - m.right);
  const top = Math.max(...groups.flatMap((g) => [g.g1, g.g0]), 0.1);
  const ys = new LinearScale(top * 1.15, 0, m.top, h - m.bottom);
  const slot = (xs.r1 - xs.r0) / groups.length;
  const bar = slot * 0.3;
  groups.forEach((g, i) => {
    const cx = xs.r0 + slot * (i + 0.5);
    svg.rect(cx - bar - 2, ys.map(g.g1), bar, ys.map(0) - ys.map(g.g1), "fill:#ee6677");
    svg.rect(cx + 2, ys.map(g.g0), bar, ys.map(0) - ys.map(g.g0), "fill:#4477aa");
    svg.text(cx, ys.r1 + 16, g.label, "font:10px sans-serif;fill:#333");
    svg.text(cx, ys.map(Math.max(g.g1, g.g0)) - 6, `gap ${g.gap.toFixed(3)}`,
      "font:9px sans-serif;fill:#555");
  });
  svg.line(xs.r0, ys.r1, xs.r1, ys.r1, "stroke:#333;stroke-width:1");
  svg.line(xs.r0, ys.r0, xs.r0, ys.r1, "stroke:#333;stroke-width:1");
  for (const t of ys.ticks(4)) {
    svg.text(xs.r0 - 8, ys.map(t) + 3, t.toFixed(2), "font:10px sans-serif;fill:#333", "end");
  }
  svg.text(xs.r0 - 40, ys.r0 - 10, "positive fraction", "font:11px sans-serif;fill:#333", "start");
  if (spec.title) svg.text((xs.r0 + xs.r1) / 2, 18, spec.title, "font:bold 13px sans-serif;fill:#111");
  svg.metadata(SERIES_ID, { kind: "fairness_bar", groups });
  return svg.render();
}
