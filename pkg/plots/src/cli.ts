#!/usr/bin/env node
/**
 * plots <kind> --in <csv> --out <svg>
 *
 * Renders one benchmark figure from a bench-format CSV. Kinds:
 *   throughput-bars   per-node throughput, grouped bars per mode
 *   progress-lines    cumulative delivered bytes over time, line per node
 *   latency-load      median commit latency vs offered transaction rate
 *   traffic-fraction  dispersal share of total download traffic
 *
 * Exits nonzero with a column-level diagnostic on malformed input.
 */
import { readFileSync, realpathSync, writeFileSync } from "node:fs";
import { pathToFileURL } from "node:url";
import { FIGURES } from "./figures.js";
import { parseBenchCsv, SchemaError } from "./schema.js";

const USAGE =
  `usage: plots <kind> --in <csv> --out <svg>\n` +
  `kinds: ${Object.keys(FIGURES).sort().join(", ")}`;

interface Args {
  kind: string;
  input: string;
  output: string;
}

function parseArgs(argv: string[]): Args {
  let kind = "";
  let input = "";
  let output = "";
  const positional: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--in") input = argv[++i] ?? "";
    else if (arg === "--out") output = argv[++i] ?? "";
    else if (arg === "--help" || arg === "-h") throw new UsageError(USAGE, 0);
    else if (arg.startsWith("-")) {
      throw new UsageError(`unknown option ${arg}\n${USAGE}`);
    } else positional.push(arg);
  }
  if (positional.length !== 1) {
    throw new UsageError(`expected exactly one figure kind\n${USAGE}`);
  }
  kind = positional[0];
  if (!(kind in FIGURES)) {
    throw new UsageError(`unknown figure kind "${kind}"\n${USAGE}`);
  }
  if (!input || !output) {
    throw new UsageError(`--in and --out are both required\n${USAGE}`);
  }
  return { kind, input, output };
}

class UsageError extends Error {
  code: number;
  constructor(message: string, code = 2) {
    super(message);
    this.code = code;
  }
}

export function main(argv: string[],
                     log: (line: string) => void = (line) =>
                       process.stderr.write(line + "\n")): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    if (err instanceof UsageError) {
      log(err.message);
      return err.code;
    }
    throw err;
  }
  let text: string;
  try {
    text = readFileSync(args.input, "utf8");
  } catch (err) {
    log(`cannot read ${args.input}: ${(err as Error).message}`);
    return 1;
  }
  try {
    const rows = parseBenchCsv(text);
    const svg = FIGURES[args.kind](rows);
    writeFileSync(args.output, svg);
  } catch (err) {
    if (err instanceof SchemaError) {
      log(`${args.input}: ${err.message}`);
      return 1;
    }
    throw err;
  }
  return 0;
}

const entry = process.argv[1];
if (entry && import.meta.url === pathToFileURL(realpathSync(entry)).href) {
  process.exit(main(process.argv.slice(2)));
}
