import { BENCH_COLUMNS, BenchRow } from "../src/schema";

const DEFAULTS: BenchRow = {
  experiment: "spatial",
  mode: "dl",
  rep: 0,
  offered_tx_per_s: 0,
  time_s: 1,
  node: 0,
  delivered_bytes: 0,
  committed_epoch: 0,
  retrieval_lag_epochs: 0,
  dispersal_bytes_in: 0,
  retrieval_bytes_in: 0,
  median_latency_ms: 0,
};

/** Build bench CSV text from sparse row specs, defaulting the rest. */
export function csvOf(rows: Array<Partial<BenchRow>>): string {
  const lines = [BENCH_COLUMNS.join(",")];
  for (const spec of rows) {
    const row = { ...DEFAULTS, ...spec };
    lines.push(BENCH_COLUMNS.map((c) => String(row[c])).join(","));
  }
  return lines.join("\n") + "\n";
}
