"""Deterministic discrete-event network simulator for full consensus
clusters.

Each node owns an egress pipe and an ingress pipe (capacity in bytes/s,
fixed or trace-driven). A message serializes through the sender's egress,
crosses a propagation delay (plus any adversarial extra, bounded), then
serializes through the receiver's ingress — store-and-forward. Within a
pipe, bandwidth is split by weighted processor sharing: every backlogged
dispersal flow (one per peer, FIFO within it) has weight T, and the
retrieval class collectively has weight 1 because only the
lowest-(epoch, seq) retrieval transfer is ever actively sending. Equal-
weight sharing among dispersal flows is tracked in virtual time, so each
event costs O(log n).

Everything — message interleaving, bandwidth traces, adversary jitter,
load arrival — derives from the config seed; identical configs produce
byte-identical reports.
"""
from __future__ import annotations

import hashlib
import heapq
import math
import random
import statistics
from dataclasses import dataclass, field, replace
from typing import Optional

from . import codec, vid, wire
from .ba import Aux, Bval, Decided
from .codec import Params
from .core import (BROADCAST, DISPERSAL, RETRIEVAL, Core, Outgoing,
                   ProposerPolicy)
from .vid import Cancel, Chunk, InstanceId, ReturnChunk

# event kinds (heap entries are (time_us, seq, kind, a, b))
_EV_PIPE = 0
_EV_ARRIVE = 1
_EV_TICK = 2
_EV_TRACE = 3
_EV_PROBE = 4
_EV_LOAD = 5


@dataclass
class BandwidthTrace:
    """Per-node capacity series, one sample per dt_s seconds, bytes/s
    (applied to both ingress and egress)."""
    samples: list        # samples[node][step]
    dt_s: float = 1.0


def gauss_markov_trace(b: float, sigma: float, alpha: float,
                       n_samples: int, seed: int) -> list[float]:
    """Autocorrelated capacity series: X0 = b, then
    X_{t+1} = a·X_t + (1−a)·b + sqrt(1−a²)·σ·Z_t, clamped at 0.05·b."""
    if b <= 0 or not (0 <= alpha < 1):
        raise ValueError("need b > 0 and 0 <= alpha < 1")
    rng = random.Random(seed)
    noise = math.sqrt(1.0 - alpha * alpha) * sigma
    x = b
    out = []
    for _ in range(n_samples):
        out.append(max(x, 0.05 * b))
        x = alpha * x + (1.0 - alpha) * b + noise * rng.gauss(0.0, 1.0)
    return out


@dataclass
class AdversaryScript:
    """Bounded message-delay control. ``jitter`` adds uniform random delay
    up to (factor−1)·propagation to every message; ``target-proposer``
    delays only dispersal-class traffic of one proposer's instances by the
    full bound (the censorship attack); ``fair`` adds nothing. Delays are
    bounded, so every correct-to-correct message is still delivered."""
    policy: str = "fair"            # fair | jitter | target-proposer
    max_delay_factor: float = 10.0
    target_proposer: Optional[int] = None

    def extra_delay_us(self, rng: random.Random, prop_us: int,
                       out: Outgoing) -> int:
        bound = int((self.max_delay_factor - 1.0) * prop_us)
        if self.policy == "jitter":
            return rng.randrange(bound + 1)
        if self.policy == "target-proposer":
            if (out.traffic_class == DISPERSAL
                    and out.instance.proposer == self.target_proposer
                    and type(out.payload) in (Chunk,)):
                return bound
        return 0


@dataclass
class LoadModel:
    kind: str = "saturating"        # saturating | poisson | trickle | none
    tx_bytes: int = 1000
    rate_tx_per_s: float = 0.0      # poisson / trickle rate


@dataclass
class SimConfig:
    n: int
    f: int
    seed: int
    duration_s: float
    propagation_delay_us: int = 100_000
    bandwidth: Optional[object] = None      # None=unlimited | list['s | BandwidthTrace
    priority_weight_T: float = 30.0
    policy: ProposerPolicy = field(default_factory=ProposerPolicy)
    load: LoadModel = field(default_factory=LoadModel)
    byzantine: dict = field(default_factory=dict)  # node -> behavior
    adversary: AdversaryScript = field(default_factory=AdversaryScript)
    cancel_optimization: bool = True
    probe_interval_s: float = 1.0
    drain_after_duration: bool = False      # freeze proposals, run to empty
    drain_flush_epochs: int = 2             # empty epochs so linking can
    check_invariants: bool = True           # claim 0-decided tail blocks
    event_cap: int = 100_000_000


CSV_COLUMNS = ("time_s", "node", "delivered_bytes", "committed_epoch",
               "retrieval_lag_epochs", "dispersal_bytes_in",
               "retrieval_bytes_in", "median_latency_ms")


@dataclass
class NodeReport:
    node: int
    log: list
    log_hash: bytes
    delivered_payload_bytes: int
    latencies_us: list
    dispersal_bytes_in: int = 0
    retrieval_bytes_in: int = 0
    dispersal_bytes_out: int = 0
    retrieval_bytes_out: int = 0
    proposal_times_us: list = field(default_factory=list)
    batch_sizes: list = field(default_factory=list)
    submitted_txs: int = 0
    delivered_epochs: int = 0


@dataclass
class SimReport:
    nodes: list
    csv_rows: list
    events: int
    run_digest: str

    def csv_text(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for row in self.csv_rows:
            lines.append(",".join(str(row[c]) for c in CSV_COLUMNS))
        return "\n".join(lines) + "\n"


class CodecCache:
    """Simulator-private shortcut for chunk verification and block
    decoding. Honest proposers register the exact chunk bytes they sent, so
    receivers can accept by equality instead of recomputing hash paths;
    registrations from scripted-Byzantine nodes are proof-checked once
    before entering the table. Anything not in the table takes the real
    cryptographic path, so adversarial bytes gain nothing."""

    def __init__(self):
        self.chunks: dict = {}      # (root, index) -> chunk bytes
        self.results: dict = {}     # root -> decode_and_check result
        self.roots_of: dict = {}    # instance -> [roots] (for GC)

    def register(self, root, sends, instance, trusted: bool):
        self.roots_of.setdefault(instance, []).append(root)
        for index, msg in sends:
            if not trusted and not codec.merkle_verify(
                    root, index, msg.chunk, msg.proof):
                continue
            self.chunks[(root, index)] = msg.chunk

    def verify(self, root, index, chunk, proof) -> bool:
        known = self.chunks.get((root, index))
        if known is not None and (known is chunk or known == chunk):
            return True
        return codec.merkle_verify(root, index, chunk, proof)

    def decode_check(self, root, chunks, params):
        hit = self.results.get(root)
        if hit is None:
            hit = vid.decode_and_check(root, chunks, params)
            self.results[root] = hit
        return hit

    def gc_delivered(self, instances):
        """Drop cache entries for instances every node has delivered."""
        gone = set()
        for instance in instances:
            for root in self.roots_of.pop(instance, ()):
                gone.add(root)
                self.results.pop(root, None)
        if gone:
            for key in [k for k in self.chunks if k[0] in gone]:
                del self.chunks[key]


class _Transfer:
    __slots__ = ("size", "remaining", "vfinish", "instance", "payload",
                 "traffic_class", "sender", "dest", "epoch", "seq",
                 "cancelled")

    def __init__(self, size, instance, payload, traffic_class, sender, dest,
                 seq):
        self.size = size
        self.remaining = float(size)
        self.vfinish = 0.0
        self.instance = instance
        self.payload = payload
        self.traffic_class = traffic_class
        self.sender = sender
        self.dest = dest
        self.epoch = instance.epoch
        self.seq = seq
        self.cancelled = False


class _Pipe:
    """One direction of one node. Dispersal: per-peer FIFO flows, equal
    weight T each, tracked in virtual time. Retrieval: strict
    (epoch, seq) order, single active transfer, class weight 1."""

    __slots__ = ("cap", "T", "flows", "heads", "retr", "retr_active",
                 "virtual", "last_us", "gen", "sim", "node", "direction")

    def __init__(self, sim, node, direction, cap_bytes_per_s, T):
        self.sim = sim
        self.node = node
        self.direction = direction
        self.cap = cap_bytes_per_s / 1e6      # bytes per microsecond
        self.T = T
        self.flows: dict = {}                 # peer -> deque-like list queue
        self.heads: list = []                 # heap of (vfinish, seq, transfer)
        self.retr: list = []                  # heap of (epoch, seq, transfer)
        self.retr_active: Optional[_Transfer] = None
        self.virtual = 0.0
        self.last_us = 0
        self.gen = 0

    # -- rate bookkeeping ---------------------------------------------------

    def _rates(self):
        k = len(self.heads)
        r = 1 if (self.retr_active is not None) else 0
        if k == 0 and r == 0:
            return 0.0, 0.0
        denom = k * self.T + r
        if k and r:
            return self.cap * self.T / denom, self.cap / denom
        if k:
            return self.cap / k, 0.0
        return 0.0, self.cap

    def settle(self, now_us):
        dt = now_us - self.last_us
        self.last_us = now_us
        if dt <= 0:
            return
        disp_rate, retr_rate = self._rates()
        if self.heads:
            self.virtual += disp_rate * dt
        if self.retr_active is not None:
            self.retr_active.remaining -= retr_rate * dt

    def reschedule(self, now_us):
        # dt >= 1 guarantees progress even when float rounding leaves a
        # completion fractionally short of its threshold.
        self.gen += 1
        disp_rate, retr_rate = self._rates()
        if self.heads and disp_rate > 0:
            vfin = self.heads[0][0]
            dt = max(1, int(math.ceil((vfin - self.virtual) / disp_rate)))
            self.sim._push(now_us + dt, _EV_PIPE, self, self.gen)
        if self.retr_active is not None and retr_rate > 0:
            dt = max(1, int(math.ceil(self.retr_active.remaining / retr_rate)))
            self.sim._push(now_us + dt, _EV_PIPE, self, self.gen)

    # -- queue management ---------------------------------------------------

    def enqueue(self, now_us, transfer: _Transfer):
        self.settle(now_us)
        if transfer.traffic_class == DISPERSAL:
            peer = transfer.dest if self.direction == 0 else transfer.sender
            queue = self.flows.get(peer)
            if queue is None:
                queue = self.flows[peer] = []
            queue.append(transfer)
            if len(queue) == 1:
                transfer.vfinish = self.virtual + transfer.size
                heapq.heappush(self.heads, (transfer.vfinish, transfer.seq,
                                            transfer))
        else:
            heapq.heappush(self.retr, (transfer.epoch, transfer.seq, transfer))
            self._promote_retrieval()
        self.reschedule(now_us)

    def _promote_retrieval(self):
        while self.retr_active is None and self.retr:
            _, _, transfer = heapq.heappop(self.retr)
            if transfer.cancelled:
                self.sim._finish(self, transfer, skipped=True)
                continue
            self.retr_active = transfer

    def on_timer(self, now_us, gen):
        if gen != self.gen:
            return
        self.settle(now_us)
        finished = []
        while self.heads and self.heads[0][0] <= self.virtual + 1e-6:
            _, _, transfer = heapq.heappop(self.heads)
            peer = transfer.dest if self.direction == 0 else transfer.sender
            queue = self.flows[peer]
            queue.pop(0)
            while queue and queue[0].cancelled:
                self.sim._finish(self, queue.pop(0), skipped=True)
            if queue:
                head = queue[0]
                head.vfinish = self.virtual + head.size
                heapq.heappush(self.heads, (head.vfinish, head.seq, head))
            else:
                del self.flows[peer]
            finished.append(transfer)
        if (self.retr_active is not None
                and self.retr_active.remaining <= 1e-6):
            finished.append(self.retr_active)
            self.retr_active = None
            self._promote_retrieval()
        for transfer in finished:
            self.sim._finish(self, transfer, skipped=False)
        self.reschedule(now_us)

    def set_capacity(self, now_us, cap_bytes_per_s):
        self.settle(now_us)
        self.cap = cap_bytes_per_s / 1e6
        self.reschedule(now_us)

    def purge_returns(self, instance, dest):
        """Cancel optimization: drop queued (not yet started) ReturnChunks
        for a finished retrieval. The in-flight one, if any, completes."""
        for _, _, transfer in self.retr:
            if (transfer.instance == instance and transfer.dest == dest
                    and type(transfer.payload) is ReturnChunk):
                transfer.cancelled = True


class Simulator:
    def __init__(self, config: SimConfig):
        self.config = config
        self.params = Params(config.n, config.f)
        self.rng = random.Random(config.seed)
        self.coin_seed = hashlib.sha256(
            b"coin" + config.seed.to_bytes(8, "big")).digest()
        self.cache = CodecCache()
        self.now_us = 0
        self.end_us = int(config.duration_s * 1e6)
        self.heap: list = []
        self.seq = 0
        self.events = 0
        self.cores: dict[int, Optional[Core]] = {}
        self.liars: dict[int, random.Random] = {}
        self.reports = [NodeReport(i, [], b"", 0, []) for i in range(config.n)]
        self.csv_rows: list = []
        self.tick_at: list = [None] * config.n
        self.tx_counter = 0
        self.unlimited = config.bandwidth is None
        self.frozen = False

        for i in range(config.n):
            behavior = config.byzantine.get(i)
            if behavior == "silent":
                self.cores[i] = None
                continue
            self.cores[i] = self._make_core(i, behavior)
        if not self.unlimited:
            caps = self._capacities_at(0)
            self.egress = [_Pipe(self, i, 0, caps[i], config.priority_weight_T)
                           for i in range(config.n)]
            self.ingress = [_Pipe(self, i, 1, caps[i], config.priority_weight_T)
                            for i in range(config.n)]

    # ------------------------------------------------------------ plumbing

    def _make_core(self, i: int, behavior):
        policy = replace(self.config.policy,
                         cancel_enabled=self.config.cancel_optimization)
        core = Core(i, self.params, policy, self.coin_seed,
                    verify=self.cache.verify,
                    decode_check=self.cache.decode_check)
        trusted = behavior is None

        def encode_fn(block, instance, _core=core, _trusted=trusted):
            root, sends = vid.disperse(block, self.params, instance)
            self.cache.register(root, sends, instance, _trusted)
            return root, sends

        core.encode_fn = encode_fn
        if behavior == "inconsistent-encoder":
            core.encode_fn = self._mixed_encode_fn()
        elif behavior == "ba-liar":
            self.liars[i] = random.Random(self.config.seed ^ (0x1147 + i))
        elif behavior is not None and behavior.startswith("censor:"):
            target = int(behavior.split(":", 1)[1])
            core.censor_target = target
            original = core._on_vid_complete

            def censoring(now_us, epoch, proposer, _core=core,
                          _original=original, _target=target):
                if proposer == _target:
                    _core.completed[proposer].add(epoch)
                    while (_core.varray[proposer] + 1
                           in _core.completed[proposer]):
                        _core.varray[proposer] += 1
                        _core.completed[proposer].discard(
                            _core.varray[proposer])
                    return
                _original(now_us, epoch, proposer)

            core._on_vid_complete = censoring
        return core

    def _mixed_encode_fn(self):
        def encode(block, instance):
            cover = bytes(len(block))
            s1 = codec.encode(block, self.params).shards
            s2 = codec.encode(cover, self.params).shards
            mixed = s1[:self.params.k] + s2[self.params.k:]
            root = codec.merkle_root(mixed)
            sends = [(i, Chunk(root, mixed[i], codec.merkle_prove(mixed, i)))
                     for i in range(self.params.n)]
            self.cache.register(root, sends, instance, trusted=False)
            return root, sends
        return encode

    def _capacities_at(self, second: int):
        bw = self.config.bandwidth
        if bw is None:
            return [float("inf")] * self.config.n
        if isinstance(bw, BandwidthTrace):
            return [series[min(second, len(series) - 1)]
                    for series in bw.samples]
        return list(bw)

    def _push(self, time_us, kind, a, b):
        self.seq += 1
        heapq.heappush(self.heap, (time_us, self.seq, kind, a, b))

    # ------------------------------------------------------------ sending

    def _drain(self, i: int):
        core = self.cores[i]
        if core is None:
            return
        outbox = core.outbox
        if outbox:
            core.outbox = []
            for out in outbox:
                self._transmit(i, out)
        self._refill(i)
        self._schedule_tick(i)

    def _transmit(self, sender: int, out: Outgoing):
        size = 0 if type(out.payload) is Cancel else wire.body_size(out.payload)
        report = self.reports[sender]
        fanout = self.config.n - 1 if out.dest == BROADCAST else 1
        if out.traffic_class == DISPERSAL:
            report.dispersal_bytes_out += size * fanout
        else:
            report.retrieval_bytes_out += size * fanout
        if self.unlimited:
            # One event per send; broadcasts fan out at delivery time.
            extra = self.config.adversary.extra_delay_us(
                self.rng, self.config.propagation_delay_us, out)
            self._push(self.now_us + self.config.propagation_delay_us + extra,
                       _EV_ARRIVE, (sender, out.dest, out.instance,
                                    out.payload, out.traffic_class, size),
                       None)
            return
        for dest in (range(self.config.n) if out.dest == BROADCAST
                     else (out.dest,)):
            if dest == sender:
                continue
            self.seq += 1
            transfer = _Transfer(size, out.instance, out.payload,
                                 out.traffic_class, sender, dest, self.seq)
            self.egress[sender].enqueue(self.now_us, transfer)

    def _finish(self, pipe: _Pipe, transfer: _Transfer, skipped: bool):
        if skipped:
            return
        if pipe.direction == 0:
            out = Outgoing(transfer.dest, transfer.instance,
                           transfer.payload, transfer.traffic_class)
            extra = self.config.adversary.extra_delay_us(
                self.rng, self.config.propagation_delay_us, out)
            transfer.remaining = float(transfer.size)
            self._push(self.now_us + self.config.propagation_delay_us + extra,
                       _EV_ARRIVE, transfer, None)
        else:
            self._deliver(transfer.sender, transfer.dest, transfer.instance,
                          transfer.payload, transfer.traffic_class,
                          transfer.size)

    # ---------------------------------------------------------- receiving

    def _deliver(self, sender, dest, instance, payload, traffic_class, size):
        report = self.reports[dest]
        if traffic_class == DISPERSAL:
            report.dispersal_bytes_in += size
        else:
            report.retrieval_bytes_in += size
        core = self.cores[dest]
        if core is None:
            return
        if type(payload) is Cancel and not self.unlimited:
            self.egress[dest].purge_returns(instance, sender)
        core.on_message(self.now_us, instance, payload, sender)
        self._lie(dest)
        self._drain(dest)

    def _lie(self, i: int):
        liar_rng = self.liars.get(i)
        if liar_rng is None or self.cores[i] is None:
            return
        if liar_rng.random() >= 0.02:
            return
        core = self.cores[i]
        epoch = max(1, core.phase1_done_through + 1)
        instance = InstanceId(epoch, liar_rng.randrange(self.config.n))
        bit = liar_rng.randint(0, 1)
        roll = liar_rng.random()
        if roll < 0.45:
            payload = Bval(liar_rng.randrange(3), bit)
        elif roll < 0.9:
            payload = Aux(liar_rng.randrange(3), bit)
        else:
            payload = Decided(bit)
        core.outbox.append(Outgoing(BROADCAST, instance, payload, DISPERSAL))

    # -------------------------------------------------------------- load

    def _refill(self, i: int):
        core = self.cores[i]
        load = self.config.load
        if (core is None or self.frozen or load.kind != "saturating"):
            return
        target = 2 * core.policy.max_block_bytes
        if core.queue_bytes >= target:
            return
        txs = []
        while core.queue_bytes + len(txs) * load.tx_bytes < target:
            self.tx_counter += 1
            txs.append(self.tx_counter.to_bytes(8, "big").rjust(load.tx_bytes,
                                                                b"\x00"))
        self.reports[i].submitted_txs += len(txs)
        core.submit_txs(self.now_us, txs)

    def _load_event(self, i: int):
        core = self.cores[i]
        load = self.config.load
        if core is None or self.frozen:
            return
        self.tx_counter += 1
        tx = self.tx_counter.to_bytes(8, "big").rjust(load.tx_bytes, b"\x00")
        self.reports[i].submitted_txs += 1
        core.submit_txs(self.now_us, [tx])
        self._drain(i)
        self._schedule_load(i)

    def _schedule_load(self, i: int):
        load = self.config.load
        if load.kind == "poisson":
            gap = self.rng.expovariate(load.rate_tx_per_s)
        elif load.kind == "trickle":
            gap = 1.0 / load.rate_tx_per_s
        else:
            return
        at = self.now_us + max(1, int(gap * 1e6))
        if at < self.end_us:
            self._push(at, _EV_LOAD, i, None)

    # ------------------------------------------------------------- timers

    def _schedule_tick(self, i: int):
        core = self.cores[i]
        if core is None or self.frozen:
            return
        deadline = core.next_deadline_us()
        if deadline is None or deadline <= self.now_us:
            # Past-due deadlines need no wakeup: whatever gate is blocking
            # the proposal will call back into proposing when it clears.
            return
        if self.tick_at[i] is None or deadline < self.tick_at[i]:
            self.tick_at[i] = deadline
            self._push(deadline, _EV_TICK, i, deadline)

    # --------------------------------------------------------------- run

    def run(self) -> SimReport:
        config = self.config
        for i in range(config.n):
            core = self.cores[i]
            if core is None:
                continue
            core.start(0)
            self._refill(i)
            self._drain(i)
            self._schedule_load(i)
        trace_dt_us = 1_000_000
        if isinstance(config.bandwidth, BandwidthTrace):
            trace_dt_us = max(1, int(round(config.bandwidth.dt_s * 1e6)))
            self._push(trace_dt_us, _EV_TRACE, 1, None)
        probe_us = int(config.probe_interval_s * 1e6)
        self._push(probe_us, _EV_PROBE, probe_us, None)

        while self.heap:
            time_us, _, kind, a, b = heapq.heappop(self.heap)
            if time_us > self.end_us and not config.drain_after_duration:
                break
            if time_us > self.end_us and not self.frozen:
                self._freeze()
            self.now_us = time_us
            self.events += 1
            if self.events > config.event_cap:
                raise RuntimeError("simulation event cap exceeded")
            if kind == _EV_PIPE:
                a.on_timer(time_us, b)
            elif kind == _EV_ARRIVE:
                if self.unlimited:
                    sender, dest, instance, payload, cls, size = a
                    if dest == BROADCAST:
                        for d in range(config.n):
                            if d != sender:
                                self._deliver(sender, d, instance, payload,
                                              cls, size)
                    else:
                        self._deliver(sender, dest, instance, payload, cls,
                                      size)
                else:
                    self.ingress[a.dest].enqueue(time_us, a)
            elif kind == _EV_TICK:
                if self.tick_at[a] == b:
                    self.tick_at[a] = None
                    core = self.cores[a]
                    if core is not None and not self.frozen:
                        core.on_tick(time_us)
                        self._drain(a)
            elif kind == _EV_TRACE:
                caps = self._capacities_at(a)
                for i in range(config.n):
                    self.egress[i].set_capacity(time_us, caps[i])
                    self.ingress[i].set_capacity(time_us, caps[i])
                nxt = (a + 1) * trace_dt_us
                if nxt <= self.end_us:
                    self._push(nxt, _EV_TRACE, a + 1, None)
            elif kind == _EV_PROBE:
                self._probe(a)
                nxt = a + probe_us
                if nxt <= self.end_us:
                    self._push(nxt, _EV_PROBE, nxt, None)
            elif kind == _EV_LOAD:
                self._load_event(a)

        self._probe(self.now_us, final=True)
        return self._report()

    def _freeze(self):
        # Align the cutoff on the highest epoch anyone has proposed for, so
        # every node still joins that epoch: an epoch with absent proposers
        # would never reach n decisions and its blocks would hang undelivered.
        self.frozen = True
        cutoff = max((core.next_proposal_epoch - 1
                      for core in self.cores.values() if core is not None),
                     default=0)
        for i, core in self.cores.items():
            if core is not None:
                core.freeze_txs_epoch = cutoff
                core.freeze_epoch = cutoff + self.config.drain_flush_epochs
                core._maybe_propose(self.now_us)
                self._drain(i)

    def _probe(self, at_us, final=False):
        second = round(at_us / 1e6, 3)
        if self.csv_rows and self.csv_rows[-1]["time_s"] == second:
            return
        min_deliver = None
        for i in range(self.config.n):
            core = self.cores[i]
            if core is None:
                continue
            report = self.reports[i]
            lat = core.latencies_us[-512:]
            median_ms = (statistics.median(lat) / 1000.0) if lat else 0.0
            self.csv_rows.append({
                "time_s": second,
                "node": i,
                "delivered_bytes": core.delivered_payload_bytes,
                "committed_epoch": core.next_deliver - 1,
                "retrieval_lag_epochs": core.retrieval_lag(),
                "dispersal_bytes_in": report.dispersal_bytes_in,
                "retrieval_bytes_in": report.retrieval_bytes_in,
                "median_latency_ms": round(median_ms, 3),
            })
            if min_deliver is None or core.next_deliver < min_deliver:
                min_deliver = core.next_deliver
        if min_deliver is not None and min_deliver > 1 and not final:
            upto = min_deliver - 1
            ref = next(core for i, core in self.cores.items()
                       if core is not None and i not in self.config.byzantine)
            globally_done = [k for k, slot in ref.delivered_slot.items()
                             if slot <= upto]
            for core in self.cores.values():
                if core is not None:
                    core.gc_below(upto)
            self.cache.gc_delivered(globally_done)
        if self.config.check_invariants:
            self._check_agreement()

    def _check_agreement(self):
        logs = [(i, core.log) for i, core in self.cores.items()
                if core is not None and i not in self.config.byzantine]
        if len(logs) < 2:
            return
        # Delivered logs must be prefix-consistent across correct nodes.
        base_i, base = max(logs, key=lambda item: len(item[1]))
        for i, log in logs:
            for mine, theirs in zip(log, base):
                if ((mine.epoch, mine.proposer, mine.block_hash)
                        != (theirs.epoch, theirs.proposer, theirs.block_hash)):
                    raise RuntimeError(
                        f"log divergence between nodes {i} and {base_i} "
                        f"(seed {self.config.seed})")

    def _report(self) -> SimReport:
        digest = hashlib.sha256()
        for i in range(self.config.n):
            core = self.cores[i]
            report = self.reports[i]
            if core is not None:
                report.log = [(x.epoch, x.proposer, x.block_hash, x.linked,
                               x.placeholder, x.payload_bytes)
                              for x in core.log]
                report.log_hash = core.log_hash()
                report.delivered_payload_bytes = core.delivered_payload_bytes
                report.latencies_us = list(core.latencies_us)
                report.proposal_times_us = list(core.proposal_times_us)
                report.batch_sizes = list(core.batch_sizes)
                report.delivered_epochs = core.next_deliver - 1
            digest.update(report.log_hash)
        for row in self.csv_rows:
            digest.update(repr(sorted(row.items())).encode())
        return SimReport(self.reports, self.csv_rows, self.events,
                         digest.hexdigest())


def run(config: SimConfig) -> SimReport:
    return Simulator(config).run()
