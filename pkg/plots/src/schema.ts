/**
 * The bench CSV contract. Every figure consumes exactly this schema; a file
 * with renamed, missing, or extra columns is rejected with a diagnostic that
 * names the offending columns rather than silently plotting garbage.
 */
import Papa from "papaparse";

export const BENCH_COLUMNS = [
  "experiment",
  "mode",
  "rep",
  "offered_tx_per_s",
  "time_s",
  "node",
  "delivered_bytes",
  "committed_epoch",
  "retrieval_lag_epochs",
  "dispersal_bytes_in",
  "retrieval_bytes_in",
  "median_latency_ms",
] as const;

export interface BenchRow {
  experiment: string;
  mode: string;
  rep: number;
  offered_tx_per_s: number;
  time_s: number;
  node: number;
  delivered_bytes: number;
  committed_epoch: number;
  retrieval_lag_epochs: number;
  dispersal_bytes_in: number;
  retrieval_bytes_in: number;
  median_latency_ms: number;
}

const STRING_COLUMNS = new Set(["experiment", "mode"]);

export class SchemaError extends Error {}

export function parseBenchCsv(text: string): BenchRow[] {
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    const at = e.row === undefined ? "" : ` at data row ${e.row + 1}`;
    throw new SchemaError(`CSV parse error${at}: ${e.message}`);
  }

  const have = parsed.meta.fields ?? [];
  const expected = BENCH_COLUMNS as readonly string[];
  const missing = expected.filter((c) => !have.includes(c));
  const unexpected = have.filter((c) => !expected.includes(c));
  if (missing.length > 0 || unexpected.length > 0) {
    const parts: string[] = [];
    if (missing.length > 0) parts.push(`missing: ${missing.join(", ")}`);
    if (unexpected.length > 0) {
      parts.push(`unexpected: ${unexpected.join(", ")}`);
    }
    throw new SchemaError(
      `CSV columns do not match the bench schema (${parts.join("; ")}). ` +
        `Expected exactly: ${expected.join(", ")}`,
    );
  }
  if (parsed.data.length === 0) {
    throw new SchemaError("CSV has a header but no data rows");
  }

  return parsed.data.map((raw, i) => {
    const row: Record<string, string | number> = {};
    for (const column of BENCH_COLUMNS) {
      const cell = raw[column];
      if (STRING_COLUMNS.has(column)) {
        if (!cell) {
          throw new SchemaError(`empty "${column}" at data row ${i + 1}`);
        }
        row[column] = cell;
        continue;
      }
      const value = Number(cell);
      if (cell === "" || cell === undefined || !Number.isFinite(value)) {
        throw new SchemaError(
          `non-numeric "${column}" value ${JSON.stringify(cell)} ` +
            `at data row ${i + 1}`,
        );
      }
      row[column] = value;
    }
    return row as unknown as BenchRow;
  });
}
