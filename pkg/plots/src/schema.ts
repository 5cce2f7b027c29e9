/**
 * Readers for the experiment runner's artifact files.
 *
 * predictive.csv: optional leading `# key=value` comment lines, then a
 * header row, then numeric rows. Regression columns are
 * x_1..x_Q, mean, q2_5, q50, q97_5; classification columns are
 * x_1..x_Q, p_0..p_{K-1}.
 *
 * metrics.json: { schema_version, config_hash, metrics: [{name, value, ...}] }
 * sweep.json:   { param, values, runs: [{value, dir, metrics: {...}}] }
 */

import fs from "node:fs";

export class SchemaMismatch extends Error {}

export interface PredictiveTable {
  columns: string[];
  rows: number[][];
  inputColumns: string[];
  configHash?: string;
}

export function column(table: PredictiveTable, name: string): number[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) {
    throw new SchemaMismatch(`missing column '${name}'`);
  }
  return table.rows.map((r) => r[idx]);
}

export function parsePredictiveCsv(text: string): PredictiveTable {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  let configHash: string | undefined;
  let i = 0;
  while (i < lines.length && lines[i].startsWith("#")) {
    const m = lines[i].match(/^#\s*config_hash=(\w+)/);
    if (m) configHash = m[1];
    i += 1;
  }
  if (i >= lines.length) {
    throw new SchemaMismatch("empty predictive file: no header row");
  }
  const columns = lines[i].split(",").map((c) => c.trim());
  i += 1;
  const rows: number[][] = [];
  for (; i < lines.length; i += 1) {
    const cells = lines[i].split(",");
    if (cells.length !== columns.length) {
      throw new SchemaMismatch(
        `row ${rows.length + 1} has ${cells.length} cells, expected ${columns.length}`,
      );
    }
    const row = cells.map((c, j) => {
      const v = Number(c);
      if (!Number.isFinite(v) && c.trim() !== "inf" && c.trim() !== "-inf") {
        throw new SchemaMismatch(`non-numeric cell in column '${columns[j]}'`);
      }
      return v;
    });
    rows.push(row);
  }
  if (rows.length === 0) {
    throw new SchemaMismatch("predictive file has a header but no data rows");
  }
  const inputColumns = columns.filter((c) => /^x_\d+$/.test(c));
  if (inputColumns.length === 0) {
    throw new SchemaMismatch(`missing column 'x_1'`);
  }
  return { columns, rows, inputColumns, configHash };
}

export function readPredictiveCsv(path: string): PredictiveTable {
  return parsePredictiveCsv(fs.readFileSync(path, "utf-8"));
}

export interface MetricEntry {
  name: string;
  value: number;
  split?: string;
  constraint?: string;
  [extra: string]: unknown;
}

export interface MetricsDoc {
  schema_version: number;
  config_hash: string;
  metrics: MetricEntry[];
}

export function readMetricsJson(path: string): MetricsDoc {
  const doc = JSON.parse(fs.readFileSync(path, "utf-8"));
  if (!Array.isArray(doc.metrics)) {
    throw new SchemaMismatch("metrics.json: missing 'metrics' array");
  }
  for (const m of doc.metrics) {
    if (typeof m.name !== "string" || typeof m.value !== "number") {
      throw new SchemaMismatch("metrics.json: entries need string 'name' and numeric 'value'");
    }
  }
  return doc as MetricsDoc;
}

export function findMetric(doc: MetricsDoc, name: string, match?: Partial<MetricEntry>): MetricEntry {
  const hit = doc.metrics.find(
    (m) =>
      m.name === name &&
      (!match || Object.entries(match).every(([k, v]) => m[k] === v)),
  );
  if (!hit) {
    throw new SchemaMismatch(`metric '${name}' not found`);
  }
  return hit;
}

export interface SweepRun {
  value: number;
  dir: string;
  metrics: Record<string, number>;
}

export interface SweepDoc {
  param: string;
  values: number[];
  runs: SweepRun[];
  config_hash?: string;
}

export function readSweepJson(path: string): SweepDoc {
  const doc = JSON.parse(fs.readFileSync(path, "utf-8"));
  if (!Array.isArray(doc.runs) || typeof doc.param !== "string") {
    throw new SchemaMismatch("sweep.json: need 'param' and 'runs'");
  }
  for (const r of doc.runs) {
    if (typeof r.value !== "number" || typeof r.metrics !== "object") {
      throw new SchemaMismatch("sweep.json: runs need numeric 'value' and a 'metrics' table");
    }
  }
  return doc as SweepDoc;
}
