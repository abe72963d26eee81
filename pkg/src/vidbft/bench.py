"""Benchmark experiments over the simulator.

Each experiment writes one CSV row per (node, repetition, probe window)
with a fixed schema (see BENCH_COLUMNS) so downstream tooling can consume
the files without per-experiment switches:

    experiment, mode, rep, offered_tx_per_s,
    time_s, node, delivered_bytes, committed_epoch, retrieval_lag_epochs,
    dispersal_bytes_in, retrieval_bytes_in, median_latency_ms

``delivered_bytes`` and the two traffic counters are cumulative, so the
final row per (mode, rep, node) carries run totals.

Experiments:
  spatial      16 nodes, fixed per-node bandwidth 10+0.5i units, all modes.
  temporal     16 nodes, Gauss-Markov capacity traces vs a fixed baseline,
               cancel optimization disabled (absolute numbers with and
               without it are not comparable).
  traffic      saturating runs measuring the dispersal share of download
               traffic across block sizes and cluster sizes.
  scalability  offered-load sweep for latency-vs-load curves.

One desk "unit" of bandwidth is 125 kB/s here; everything downstream is a
ratio, so only relative levels matter.
"""
from __future__ import annotations

import argparse
import statistics
import sys
from collections import deque
from dataclasses import dataclass, field

from . import vid, wire
from .codec import Params
from .core import ProposerPolicy
from .sim import (CSV_COLUMNS, BandwidthTrace, LoadModel, SimConfig,
                  SimReport, gauss_markov_trace, run)

UNIT_BYTES_PER_S = 125_000

MODES = ("dl", "dl-coupled", "coupled-no-linking", "coupled-with-linking")

BENCH_COLUMNS = ("experiment", "mode", "rep", "offered_tx_per_s") + CSV_COLUMNS


def policy_for_mode(mode: str, **overrides) -> ProposerPolicy:
    """Translate a protocol mode name into the policy knobs that define it.

    dl                    pipelined: propose as soon as the previous epoch's
                          dispersal phase finished, deliver in background.
    dl-coupled            same pipeline, but propose empty blocks while
                          retrieval lags (spam guard).
    coupled-no-linking    retrieval must finish before the next proposal and
                          BA-dropped blocks are never recovered.
    coupled-with-linking  the same gate, with recovery of dropped blocks.
    """
    if mode == "dl":
        knobs = {}
    elif mode == "dl-coupled":
        knobs = {"coupled_spam_guard": True}
    elif mode == "coupled-no-linking":
        knobs = {"gate_on_retrieval": True, "linking_enabled": False}
    elif mode == "coupled-with-linking":
        knobs = {"gate_on_retrieval": True}
    else:
        raise ValueError(f"unknown mode {mode!r}")
    knobs.update(overrides)
    return ProposerPolicy(**knobs)


@dataclass
class ExperimentSpec:
    kind: str
    seed: int = 1
    reps: int = 1
    duration_s: float = 0.0      # 0 = experiment default


@dataclass
class MetricsReport:
    """Per-node summary of one run."""
    throughput_bytes_per_s: list
    median_latency_ms: list
    p95_latency_ms: list
    p99_latency_ms: list
    dispersal_fraction: list
    batch_sizes: list            # one list of proposed batch sizes per node


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    metrics: dict                # (mode, rep, label) -> MetricsReport
    rows: list = field(default_factory=list)

    def csv_text(self) -> str:
        lines = [",".join(BENCH_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(str(row[c]) for c in BENCH_COLUMNS))
        return "\n".join(lines) + "\n"


def _quantile_ms(lat_us, q):
    if not lat_us:
        return 0.0
    xs = sorted(lat_us)
    idx = min(len(xs) - 1, int(q * len(xs)))
    return round(xs[idx] / 1000.0, 3)


def metrics_from(report: SimReport, duration_s: float) -> MetricsReport:
    thr, med, p95, p99, frac, batches = [], [], [], [], [], []
    for node in report.nodes:
        thr.append(node.delivered_payload_bytes / duration_s)
        med.append(_quantile_ms(node.latencies_us, 0.5))
        p95.append(_quantile_ms(node.latencies_us, 0.95))
        p99.append(_quantile_ms(node.latencies_us, 0.99))
        total = node.dispersal_bytes_in + node.retrieval_bytes_in
        frac.append(node.dispersal_bytes_in / total if total else 0.0)
        batches.append(list(node.batch_sizes))
    return MetricsReport(thr, med, p95, p99, frac, batches)


def traffic_fraction(report: SimReport) -> list:
    """Per-node share of download traffic spent on dispersal, from a
    saturating run. Undefined for a single node (nothing is transferred)."""
    if len(report.nodes) < 2:
        raise ValueError("traffic fraction undefined for a single node")
    out = []
    for node in report.nodes:
        total = node.dispersal_bytes_in + node.retrieval_bytes_in
        if total == 0:
            raise ValueError("run transferred no traffic")
        out.append(node.dispersal_bytes_in / total)
    return out


def _emit(result, experiment, mode, rep, offered, report):
    for row in report.csv_rows:
        full = {"experiment": experiment, "mode": mode, "rep": rep,
                "offered_tx_per_s": offered}
        full.update(row)
        result.rows.append(full)


def _derived_seed(base: int, mode: str, rep: int) -> int:
    return base * 10_007 + MODES.index(mode) * 211 + rep * 17


# --------------------------------------------------------------- spatial

SPATIAL_N = 16
SPATIAL_F = 5
SPATIAL_BLOCK = 224 * 1024
SPATIAL_DURATION_S = 120.0


def spatial_bandwidths() -> list:
    return [int((10 + 0.5 * i) * UNIT_BYTES_PER_S) for i in range(SPATIAL_N)]


def run_spatial(spec: ExperimentSpec) -> ExperimentResult:
    duration = spec.duration_s or SPATIAL_DURATION_S
    result = ExperimentResult(spec, {})
    for mode in MODES:
        for rep in range(spec.reps):
            cfg = SimConfig(
                n=SPATIAL_N, f=SPATIAL_F,
                seed=_derived_seed(spec.seed, mode, rep),
                duration_s=duration,
                bandwidth=spatial_bandwidths(),
                policy=policy_for_mode(mode, max_block_bytes=SPATIAL_BLOCK),
                load=LoadModel(kind="saturating", tx_bytes=1000))
            report = run(cfg)
            result.metrics[(mode, rep, "")] = metrics_from(report, duration)
            _emit(result, "spatial", mode, rep, 0, report)
    return result


# -------------------------------------------------------------- temporal

# f = 2 rather than the maximal 5: epoch progress in the coupled modes is
# paced by the (f+1)-th slowest node, so a large fault bound masks most
# stragglers and hides exactly the sensitivity this experiment measures.
TEMPORAL_N = 16
TEMPORAL_F = 2
TEMPORAL_BLOCK = 224 * 1024
TEMPORAL_DURATION_S = 90.0
TEMPORAL_MODES = ("dl", "coupled-no-linking", "coupled-with-linking")
TEMPORAL_B = 10.0
TEMPORAL_SIGMA = 5.0
TEMPORAL_ALPHA = 0.98


def temporal_traces(seed: int, rep: int, duration_s: float) -> BandwidthTrace:
    # Shared across modes within a repetition, so every mode faces the same
    # bandwidth schedule and the cross-mode comparison is paired.
    seconds = int(duration_s) + 2
    return BandwidthTrace([
        gauss_markov_trace(TEMPORAL_B * UNIT_BYTES_PER_S,
                           TEMPORAL_SIGMA * UNIT_BYTES_PER_S,
                           TEMPORAL_ALPHA, seconds,
                           seed=seed * 1009 + rep * 7 + node)
        for node in range(TEMPORAL_N)])


def run_temporal(spec: ExperimentSpec) -> ExperimentResult:
    duration = spec.duration_s or TEMPORAL_DURATION_S
    result = ExperimentResult(spec, {})
    fixed = [int(TEMPORAL_B * UNIT_BYTES_PER_S)] * TEMPORAL_N
    for mode in TEMPORAL_MODES:
        for rep in range(spec.reps):
            seed = _derived_seed(spec.seed, mode, rep)
            for label, bandwidth in (
                    ("fixed", fixed),
                    ("varying", temporal_traces(spec.seed, rep, duration))):
                cfg = SimConfig(
                    n=TEMPORAL_N, f=TEMPORAL_F, seed=seed,
                    duration_s=duration, bandwidth=bandwidth,
                    policy=policy_for_mode(
                        mode, max_block_bytes=TEMPORAL_BLOCK),
                    load=LoadModel(kind="saturating", tx_bytes=1000),
                    cancel_optimization=False)
                report = run(cfg)
                result.metrics[(mode, rep, label)] = \
                    metrics_from(report, duration)
                _emit(result, f"temporal-{label}", mode, rep, 0, report)
    return result


def temporal_ratios(result: ExperimentResult, mode: str) -> list:
    """Mean-node throughput of each varying-capacity repetition relative to
    its fixed-capacity twin."""
    ratios = []
    for rep in range(result.spec.reps):
        fixed = result.metrics[(mode, rep, "fixed")]
        varying = result.metrics[(mode, rep, "varying")]
        ratios.append(statistics.mean(varying.throughput_bytes_per_s)
                      / statistics.mean(fixed.throughput_bytes_per_s))
    return ratios


# --------------------------------------------------------------- traffic

TRAFFIC_POINTS = (                 # label, n, f, block bytes, duration
    ("n16-500K", 16, 5, 500 * 1024, 8.0),
    ("n16-1M", 16, 5, 1024 * 1024, 8.0),
    ("n64-1M", 64, 21, 1024 * 1024, 4.0),
)


def run_traffic(spec: ExperimentSpec) -> ExperimentResult:
    result = ExperimentResult(spec, {})
    for label, n, f, block, duration in TRAFFIC_POINTS:
        for rep in range(spec.reps):
            cfg = SimConfig(
                n=n, f=f, seed=spec.seed * 10_007 + rep * 17,
                duration_s=spec.duration_s or duration,
                policy=ProposerPolicy(
                    max_block_bytes=block,
                    size_threshold_bytes=min(150 * 1024, block)),
                load=LoadModel(kind="saturating", tx_bytes=4096),
                probe_interval_s=0.5)
            report = run(cfg)
            result.metrics[("dl", rep, label)] = \
                metrics_from(report, cfg.duration_s)
            _emit(result, f"traffic-{label}", "dl", rep, 0, report)
    return result


def mean_fraction(result: ExperimentResult, label: str, rep: int = 0) -> float:
    return statistics.mean(
        result.metrics[("dl", rep, label)].dispersal_fraction)


# ------------------------------------------------ dispersal cost accounting

def dispersal_download_accounting(n: int, f: int, block_bytes: int,
                                  seed: int = 7) -> list:
    """Bytes each correct node downloads to finish one block dispersal —
    pure message accounting, no clock. Every message a node would receive
    (its chunk, then everyone's acknowledgement votes) is sized with the
    real wire encoding."""
    params = Params(n, f)
    instance = vid.InstanceId(1, 0)
    block = bytes((seed + i) % 251 for i in range(block_bytes))
    _, sends = vid.disperse(block, params, instance)
    servers = [vid.VidServer(params, instance, i) for i in range(n)]
    ingress = [0] * n
    queue = deque((0, dest, msg) for dest, msg in sends)
    while queue:
        sender, dest, msg = queue.popleft()
        if dest != sender:
            ingress[dest] += wire.body_size(msg)
        broadcasts, directs = servers[dest].handle(msg, sender)
        for reply in broadcasts:
            for d in range(n):
                if d != dest:
                    queue.append((dest, d, reply))
        for d, reply in directs:
            queue.append((dest, d, reply))
    assert all(s.completed for s in servers)
    return ingress


# ------------------------------------------------------------ scalability

SCALABILITY_RATES = (25.0, 50.0, 100.0, 200.0, 400.0)


def run_scalability(spec: ExperimentSpec) -> ExperimentResult:
    result = ExperimentResult(spec, {})
    duration = spec.duration_s or 20.0
    for rate in SCALABILITY_RATES:
        for rep in range(spec.reps):
            cfg = SimConfig(
                n=4, f=1, seed=spec.seed * 10_007 + rep * 17 + int(rate),
                duration_s=duration,
                load=LoadModel(kind="poisson", tx_bytes=1000,
                               rate_tx_per_s=rate),
                drain_after_duration=True)
            report = run(cfg)
            result.metrics[("dl", rep, f"load-{rate:g}")] = \
                metrics_from(report, duration)
            _emit(result, "scalability", "dl", rep, rate, report)
    return result


# ------------------------------------------------------------------- CLI

RUNNERS = {
    "spatial": run_spatial,
    "temporal": run_temporal,
    "traffic": run_traffic,
    "scalability": run_scalability,
}

DEFAULT_REPS = {"spatial": 1, "temporal": 5, "traffic": 1, "scalability": 1}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bench", description="Run a benchmark experiment, write CSV.")
    parser.add_argument("kind", choices=sorted(RUNNERS))
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--reps", type=int, default=0,
                        help="repetitions (default per experiment)")
    parser.add_argument("--duration", type=float, default=0.0,
                        help="override simulated seconds per run")
    args = parser.parse_args(argv)
    spec = ExperimentSpec(kind=args.kind, seed=args.seed,
                          reps=args.reps or DEFAULT_REPS[args.kind],
                          duration_s=args.duration)
    result = RUNNERS[args.kind](spec)
    with open(args.out, "w") as handle_:
        handle_.write(result.csv_text())
    for key in sorted(result.metrics):
        m = result.metrics[key]
        mean_thr = statistics.mean(m.throughput_bytes_per_s)
        mean_frac = statistics.mean(m.dispersal_fraction)
        print(f"{key}: mean throughput {mean_thr:,.0f} B/s, "
              f"dispersal fraction {mean_frac:.4f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
