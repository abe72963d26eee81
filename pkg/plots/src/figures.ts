/**
 * The four figure kinds. Each consumes parsed bench rows and returns SVG
 * text. Reductions are limited to means over repetitions (labelled in the
 * title) and the documented per-series roll-ups; series ordering, colors,
 * and axis ranges are fixed functions of the input so output is
 * reproducible byte-for-byte.
 */
import { BenchRow, SchemaError } from "./schema.js";
import { frame, legend, modeColor, sortModes } from "./svg.js";

export type Figure = (rows: BenchRow[]) => string;

/** Unit separator; cannot occur in CSV cells, so keys never collide. */
const SEP = String.fromCharCode(31);

function groupBy<T>(items: T[], key: (item: T) => string): Map<string, T[]> {
  const out = new Map<string, T[]>();
  for (const item of items) {
    const k = key(item);
    const bucket = out.get(k);
    if (bucket) bucket.push(item);
    else out.set(k, [item]);
  }
  return out;
}

function mean(values: number[]): number {
  return values.reduce((a, b) => a + b, 0) / values.length;
}

/** Distinct experiment labels in first-appearance order. */
function experiments(rows: BenchRow[]): string[] {
  return [...new Set(rows.map((r) => r.experiment))];
}

function repCount(rows: BenchRow[]): number {
  return new Set(rows.map((r) => r.rep)).size;
}

function withRepLabel(title: string, reps: number): string {
  return reps > 1 ? title + " (mean of " + reps + " reps)" : title;
}

/** One series per mode, prefixed by experiment when several are present. */
function seriesLabel(experiment: string, mode: string, multi: boolean): string {
  return multi ? experiment + " " + mode : mode;
}

/** The bare mode, for palette lookup, from a series label. */
function seriesMode(label: string, multi: boolean): string {
  return multi ? label.slice(label.lastIndexOf(" ") + 1) : label;
}

function sortSeries(labels: string[], multi: boolean): string[] {
  if (!multi) return sortModes(labels);
  return labels.sort();
}

/**
 * The last sample of each trajectory. Offered load is part of the key
 * because a load sweep reuses the same rep index for every level, with
 * time restarting at each level.
 */
function finalSamples(rows: BenchRow[]): BenchRow[] {
  const last = new Map<string, BenchRow>();
  for (const row of rows) {
    const key = [row.experiment, row.mode, row.rep, row.node,
                 row.offered_tx_per_s].join(SEP);
    const seen = last.get(key);
    if (!seen || row.time_s > seen.time_s) last.set(key, row);
  }
  return [...last.values()];
}

const DASHES = ["", "6 3", "2 2", "8 2 2 2"];

// ------------------------------------------------------- throughput bars

export function throughputBars(rows: BenchRow[]): string {
  const finals = finalSamples(rows).filter((r) => r.time_s > 0);
  if (finals.length === 0) {
    throw new SchemaError("no samples with time_s > 0 to compute throughput");
  }
  const multi = experiments(rows).length > 1;
  const nodes = [...new Set(finals.map((r) => r.node))].sort((a, b) => a - b);
  const bySeries = groupBy(finals, (r) =>
    seriesLabel(r.experiment, r.mode, multi));
  const series = sortSeries([...bySeries.keys()], multi);

  const value = new Map<string, number>();
  let peak = 0;
  for (const [label, sRows] of bySeries) {
    for (const [node, nRows] of groupBy(sRows, (r) => String(r.node))) {
      const v = mean(nRows.map((r) => r.delivered_bytes / r.time_s));
      value.set(label + SEP + node, v);
      peak = Math.max(peak, v);
    }
  }

  const fr = frame({
    title: withRepLabel("Per-node throughput", repCount(rows)),
    xLabel: "node",
    yLabel: "throughput (bytes/s)",
    xDomain: [-0.5, nodes.length - 0.5],
    yDomain: [0, peak * 1.05 || 1],
    xTicks: nodes.map((_, i) => i),
    xTickLabels: nodes.map(String),
  });
  const slot = (fr.plotRight - fr.plotLeft) / nodes.length;
  const bar = (slot * 0.8) / series.length;
  nodes.forEach((node, i) => {
    series.forEach((label, s) => {
      const v = value.get(label + SEP + node);
      if (v === undefined) return;
      const x = fr.x(i) - (series.length * bar) / 2 + s * bar;
      fr.svg.rect(x, fr.y(v), bar, fr.plotBottom - fr.y(v),
                  modeColor(seriesMode(label, multi), s));
    });
  });
  legend(fr, series.map((label, s) => ({
    label,
    color: modeColor(seriesMode(label, multi), s),
  })));
  return fr.svg.toString();
}

// -------------------------------------------------------- progress lines

export function progressLines(rows: BenchRow[]): string {
  const exps = experiments(rows);
  const multi = exps.length > 1;
  const modes = sortModes(rows.map((r) => r.mode));
  const reps = repCount(rows);

  // Mean delivered bytes over reps at each (experiment, mode, node, time).
  const points = new Map<string, Array<[number, number]>>();
  const byPoint = groupBy(rows, (r) =>
    [r.experiment, r.mode, r.node, r.time_s].join(SEP));
  let maxT = 0;
  let maxY = 0;
  for (const [key, pRows] of byPoint) {
    const cut = key.lastIndexOf(SEP);
    const line = key.slice(0, cut);
    const t = Number(key.slice(cut + 1));
    const y = mean(pRows.map((r) => r.delivered_bytes));
    maxT = Math.max(maxT, t);
    maxY = Math.max(maxY, y);
    const bucket = points.get(line);
    if (bucket) bucket.push([t, y]);
    else points.set(line, [[t, y]]);
  }

  const fr = frame({
    title: withRepLabel("Delivered bytes over time, one line per node", reps),
    xLabel: "time (s)",
    yLabel: "delivered bytes",
    xDomain: [0, maxT || 1],
    yDomain: [0, maxY * 1.05 || 1],
  });
  const lines = [...points.keys()].sort();
  for (const line of lines) {
    const [experiment, mode] = line.split(SEP);
    const path = points.get(line)!.sort((a, b) => a[0] - b[0]);
    fr.svg.polyline(
      path.map(([t, y]) => [fr.x(t), fr.y(y)] as [number, number]),
      modeColor(mode, modes.indexOf(mode)),
      {
        width: 1,
        opacity: 0.65,
        dash: DASHES[exps.indexOf(experiment) % DASHES.length] || undefined,
      },
    );
  }
  const entries: Array<{ label: string; color: string; dash?: string }> =
    modes.map((mode, i) => ({ label: mode, color: modeColor(mode, i) }));
  if (multi) {
    exps.forEach((experiment, i) => entries.push({
      label: experiment,
      color: "#444",
      dash: DASHES[i % DASHES.length] || "1 0",
    }));
  }
  legend(fr, entries);
  return fr.svg.toString();
}

// ------------------------------------------------------- latency vs load

export function latencyLoad(rows: BenchRow[]): string {
  const finals = finalSamples(rows);
  const multi = experiments(rows).length > 1;
  const bySeries = groupBy(finals, (r) =>
    seriesLabel(r.experiment, r.mode, multi));
  const series = sortSeries([...bySeries.keys()], multi);

  const curves = new Map<string, Array<[number, number]>>();
  let maxX = 0;
  let maxY = 0;
  for (const [label, sRows] of bySeries) {
    const curve: Array<[number, number]> = [];
    for (const [offered, oRows] of groupBy(sRows, (r) =>
      String(r.offered_tx_per_s))) {
      const y = mean(oRows.map((r) => r.median_latency_ms));
      const x = Number(offered);
      curve.push([x, y]);
      maxX = Math.max(maxX, x);
      maxY = Math.max(maxY, y);
    }
    curves.set(label, curve.sort((a, b) => a[0] - b[0]));
  }

  const fr = frame({
    title: withRepLabel("Median latency vs offered load", repCount(rows)),
    xLabel: "offered load (tx/s)",
    yLabel: "median latency (ms)",
    xDomain: [0, maxX * 1.05 || 1],
    yDomain: [0, maxY * 1.05 || 1],
  });
  series.forEach((label, s) => {
    const color = modeColor(seriesMode(label, multi), s);
    const curve = curves.get(label)!;
    if (curve.length > 1) {
      fr.svg.polyline(
        curve.map(([x, y]) => [fr.x(x), fr.y(y)] as [number, number]),
        color,
        { width: 1.5 },
      );
    }
    for (const [x, y] of curve) fr.svg.circle(fr.x(x), fr.y(y), 3.5, color);
  });
  legend(fr, series.map((label, s) => ({
    label,
    color: modeColor(seriesMode(label, multi), s),
  })));
  return fr.svg.toString();
}

// ------------------------------------------------------ traffic fraction

export function trafficFraction(rows: BenchRow[]): string {
  const finals = finalSamples(rows);
  const exps = experiments(rows);
  const modes = sortModes(rows.map((r) => r.mode));
  const reps = repCount(rows);

  // Cluster-wide dispersal share of total download, one bar per
  // (experiment, mode), fractions averaged over reps.
  const value = new Map<string, number>();
  let any = false;
  for (const [key, gRows] of groupBy(finals, (r) =>
    [r.experiment, r.mode].join(SEP))) {
    const perRep: number[] = [];
    for (const [, rRows] of groupBy(gRows, (r) => String(r.rep))) {
      const dispersal = rRows.reduce((a, r) => a + r.dispersal_bytes_in, 0);
      const retrieval = rRows.reduce((a, r) => a + r.retrieval_bytes_in, 0);
      if (dispersal + retrieval === 0) continue;
      perRep.push(dispersal / (dispersal + retrieval));
    }
    if (perRep.length > 0) {
      value.set(key, mean(perRep));
      any = true;
    }
  }
  if (!any) {
    throw new SchemaError(
      "no download traffic recorded; cannot compute dispersal fraction");
  }

  const fr = frame({
    title: withRepLabel("Dispersal share of download traffic", reps),
    xLabel: "experiment",
    yLabel: "dispersal fraction",
    xDomain: [-0.5, exps.length - 0.5],
    yDomain: [0, Math.min(1, peakOf(value) * 1.3)],
    xTicks: exps.map((_, i) => i),
    xTickLabels: exps,
  });
  const slot = (fr.plotRight - fr.plotLeft) / exps.length;
  const bar = Math.min(48, (slot * 0.7) / modes.length);
  exps.forEach((experiment, i) => {
    modes.forEach((mode, m) => {
      const v = value.get([experiment, mode].join(SEP));
      if (v === undefined) return;
      const x = fr.x(i) - (modes.length * bar) / 2 + m * bar;
      fr.svg.rect(x, fr.y(v), bar, fr.plotBottom - fr.y(v),
                  modeColor(mode, m));
      fr.svg.text(x + bar / 2, fr.y(v) - 6, v.toFixed(3),
                  { anchor: "middle", size: 11, fill: "#333" });
    });
  });
  legend(fr, modes.map((mode, m) => ({
    label: mode,
    color: modeColor(mode, m),
  })));
  return fr.svg.toString();
}

function peakOf(values: Map<string, number>): number {
  let peak = 0;
  for (const v of values.values()) peak = Math.max(peak, v);
  return peak;
}

export const FIGURES: Record<string, Figure> = {
  "throughput-bars": throughputBars,
  "progress-lines": progressLines,
  "latency-load": latencyLoad,
  "traffic-fraction": trafficFraction,
};
