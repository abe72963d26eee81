"""Epoch consensus core: n parallel dispersals + n binary agreements per
epoch, commit-set delivery, and linked delivery of blocks whose agreement
dropped them.

Each epoch e: every node batches queued transactions with its current
observation vector into a block, disperses it, and votes 1 in agreement
instance (e, j) once proposer j's dispersal completes locally. After n-f
instances output 1, the node inputs 0 to the rest; when all n have output,
the commit set S is fixed (identical everywhere) and the node retrieves
the S blocks. The observation vector carries, per proposer, the largest
epoch t such that that proposer's dispersals 1..t all completed locally;
the (f+1)th-largest observation across S bounds which older undelivered
blocks are guaranteed retrievable, and those are fetched and delivered
("linking") right after the epoch's own blocks. Blocks that decode
inconsistently surface as zero-transaction placeholders so every correct
node logs the identical sequence.

The core is driver-agnostic and single-threaded: drivers (simulator or
real transport) feed messages/ticks in, then drain ``outbox``. Outgoing
traffic is tagged dispersal-class (chunks, votes) or retrieval-class
(chunk requests/returns) so drivers can prioritize the small
latency-critical traffic over bulk downloads.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import codec, vid, wire
from .ba import Aux, BaInstance, Bval, CoinSource, Decided
from .codec import Params
from .vid import (BAD_UPLOADER, Cancel, Chunk, GotChunk, InstanceId, Ready,
                  RequestChunk, ReturnChunk, VidRetriever, VidServer)

INF = wire.INF
BROADCAST = -1

DISPERSAL = 0
RETRIEVAL = 1

EPOCH_HORIZON = 64          # ignore traffic this far past our frontier
PLACEHOLDER = b""           # log payload for undecodable blocks


@dataclass
class ProposerPolicy:
    """Batching gate plus the policy knobs distinguishing protocol modes."""
    delay_threshold_us: int = 100_000
    size_threshold_bytes: int = 150 * 1024
    max_block_bytes: int = 512 * 1024
    max_tx_bytes: int = 64 * 1024
    queue_cap_txs: Optional[int] = None
    coupled_spam_guard: bool = False      # empty txs whenever retrieval lags
    lag_limit_epochs: Optional[int] = None  # empty txs when lag exceeds P
    linking_enabled: bool = True
    gate_on_retrieval: bool = False       # next proposal waits for delivery
    cancel_enabled: bool = True
    retrieval_window: int = 8


@dataclass
class Outgoing:
    dest: int                 # node id or BROADCAST
    instance: InstanceId
    payload: object
    traffic_class: int        # DISPERSAL or RETRIEVAL


@dataclass
class LogEntry:
    epoch: int                # the block's own epoch
    proposer: int
    payload_bytes: int
    tx_count: int
    block_hash: bytes
    linked: bool
    placeholder: bool
    delivered_at_epoch: int


class EpochState:
    __slots__ = ("epoch", "servers", "bas", "ba_inputs", "outputs",
                 "ones_count", "s_set", "phase", "proposed")

    def __init__(self, epoch: int):
        self.epoch = epoch
        self.servers: dict[int, VidServer] = {}
        self.bas: dict[int, BaInstance] = {}
        self.ba_inputs: dict[int, int] = {}
        self.outputs: dict[int, int] = {}
        self.ones_count = 0
        self.s_set: Optional[tuple[int, ...]] = None
        self.phase = "agreeing"           # agreeing | retrieving | delivered
        self.proposed = False


def observation_of(result, n: int) -> tuple[int, ...]:
    """V-array carried by a retrieved block; all-INF when the block is the
    bad-uploader marker or fails to parse (treated as claiming everything,
    which the (f+1)th-largest filter then discounts)."""
    if result is None or result == BAD_UPLOADER:
        return (INF,) * n
    v_array = wire.decode_varray(result, expect_n=n)
    if v_array is None:
        return (INF,) * n
    return tuple(v_array)


def compute_estimate(observations, f: int) -> tuple[int, ...]:
    """Per node j, the (f+1)th-largest of the observed values for j, with
    INF above every finite value."""
    obs = list(observations)
    if not obs:
        raise ValueError("no observations")
    n = len(obs[0])
    out = []
    for j in range(n):
        column = sorted((row[j] for row in obs), reverse=True)
        out.append(column[f])
    return tuple(out)


class Core:
    """One node's complete protocol state."""

    def __init__(self, node_id: int, params: Params, policy: ProposerPolicy,
                 coin_seed: bytes, app_deliver: Optional[Callable] = None,
                 verify=codec.merkle_verify, decode_check=None,
                 encode_fn=None):
        self.node_id = node_id
        self.params = params
        self.policy = policy
        self.coin = CoinSource(coin_seed)
        self.app_deliver = app_deliver
        self.verify = verify
        self.decode_check = decode_check or vid.decode_and_check
        self.encode_fn = encode_fn or self._encode_plain

        self.epochs: dict[int, EpochState] = {}
        self.next_proposal_epoch = 1
        self.phase1_done_through = 0      # all BAs output for every e ≤ this
        self.completed: list[set] = [set() for _ in range(params.n)]
        self.varray: list[int] = [0] * params.n

        self.tx_queue: deque = deque()    # (tx_bytes, submit_us)
        self.queue_bytes = 0
        self.last_proposal_us = 0
        self.own_blocks: dict[int, bytes] = {}
        self.own_tx_meta: dict[int, list] = {}   # epoch -> [(submit_us, nbytes)]

        self.results: dict[tuple[int, int], bytes] = {}
        self.retrievers: dict[tuple[int, int], VidRetriever] = {}
        self.retrieval_started: set[tuple[int, int]] = set()
        self.s_lists: dict[int, list] = {}       # epoch -> sorted S members
        self.plans: dict[int, list] = {}         # epoch -> linking plan
        self.next_deliver = 1
        self.claimed: set[tuple[int, int]] = set()
        self.link_floor: list[int] = [1] * params.n  # per j: least unclaimed epoch

        self.delivered_set: set[tuple[int, int]] = set()
        self.delivered_slot: dict[tuple[int, int], int] = {}
        self.gc_frontier = 0              # epochs <= this are globally done
        self.log: list[LogEntry] = []
        self._log_hash = hashlib.sha256()
        self.delivered_payload_bytes = 0
        self.latencies_us: list[int] = []
        self.proposal_times_us: list[int] = []
        self.batch_sizes: list[int] = []
        self.epoch_estimates: dict[int, tuple[int, ...]] = {}

        self.outbox: list[Outgoing] = []
        self._local: deque = deque()
        self._advancing = False
        # Drain mode: propose only for epochs <= freeze_epoch (batch gates
        # waived there, so every node flushes through the same cutoff and
        # no epoch is left with absent proposers). Epochs past
        # freeze_txs_epoch carry no transactions: they only exist so linking
        # can still claim 0-decided blocks from the final payload epochs.
        self.freeze_epoch: Optional[int] = None
        self.freeze_txs_epoch: Optional[int] = None

    # ------------------------------------------------------------------ API

    def start(self, now_us: int):
        self.last_proposal_us = now_us
        self._maybe_propose(now_us)

    def submit_txs(self, now_us: int, txs) -> tuple[int, int]:
        """Returns (accepted, queue length); oversized txs and overflow
        beyond the queue cap are refused."""
        accepted = 0
        for tx in txs:
            if len(tx) > self.policy.max_tx_bytes:
                continue
            if (self.policy.queue_cap_txs is not None
                    and len(self.tx_queue) >= self.policy.queue_cap_txs):
                break
            self.tx_queue.append((tx, now_us))
            self.queue_bytes += len(tx)
            accepted += 1
        self._maybe_propose(now_us)
        return accepted, len(self.tx_queue)

    def on_tick(self, now_us: int):
        self._maybe_propose(now_us)

    def next_deadline_us(self) -> Optional[int]:
        """When the batching timer next wants a tick (None = no proposal
        pending)."""
        return self.last_proposal_us + self.policy.delay_threshold_us

    def on_message(self, now_us: int, instance: InstanceId, payload, sender: int):
        self._local.append((instance, payload, sender))
        self._drain_local(now_us)

    def retrieval_lag(self) -> int:
        return max(0, self.next_proposal_epoch - 1 - (self.next_deliver - 1))

    def log_hash(self) -> bytes:
        return self._log_hash.digest()

    # ---------------------------------------------------------- local loop

    def _drain_local(self, now_us: int):
        while self._local:
            instance, payload, sender = self._local.popleft()
            self._dispatch(now_us, instance, payload, sender)

    def _send(self, instance: InstanceId, payload, traffic_class: int,
              dest: int = BROADCAST):
        if dest == BROADCAST:
            self.outbox.append(Outgoing(BROADCAST, instance, payload, traffic_class))
            self._local.append((instance, payload, self.node_id))
        elif dest == self.node_id:
            self._local.append((instance, payload, self.node_id))
        else:
            self.outbox.append(Outgoing(dest, instance, payload, traffic_class))

    def _dispatch(self, now_us: int, instance: InstanceId, payload, sender: int):
        epoch, proposer = instance
        if not (0 <= proposer < self.params.n) or epoch < 1:
            return
        if epoch > max(self.next_proposal_epoch,
                       self.phase1_done_through + 1) + EPOCH_HORIZON:
            return
        kind = type(payload)
        if epoch <= self.gc_frontier:
            # Stragglers of a globally-delivered epoch: agreement traffic is
            # dead, and a reclaimed dispersal instance stays reclaimed.
            if kind in (Bval, Aux, Decided):
                return
            state = self.epochs.get(epoch)
            if state is None or instance.proposer not in state.servers:
                return
        if kind in (Chunk, GotChunk, Ready, RequestChunk, Cancel):
            server = self._server(instance)
            was_complete = server.completed
            broadcasts, directs = server.handle(payload, sender)
            for p in broadcasts:
                self._send(instance, p, DISPERSAL)
            for dest, p in directs:
                self._send(instance, p, RETRIEVAL, dest=dest)
            if server.completed and not was_complete:
                self._on_vid_complete(now_us, epoch, proposer)
        elif kind is ReturnChunk:
            self._on_return(now_us, instance, payload, sender)
        elif kind in (Bval, Aux, Decided):
            inst = self._ba(instance)
            broadcasts, directs, output = inst.handle(payload, sender)
            for p in broadcasts:
                self._send(instance, p, DISPERSAL)
            for dest, p in directs:
                self._send(instance, p, DISPERSAL, dest=dest)
            if output is not None:
                self._on_ba_output(now_us, epoch, proposer, output)

    def _server(self, instance: InstanceId) -> VidServer:
        state = self._epoch(instance.epoch)
        server = state.servers.get(instance.proposer)
        if server is None:
            server = VidServer(self.params, instance, self.node_id,
                               verify=self.verify)
            state.servers[instance.proposer] = server
        return server

    def _ba(self, instance: InstanceId) -> BaInstance:
        state = self._epoch(instance.epoch)
        inst = state.bas.get(instance.proposer)
        if inst is None:
            inst = BaInstance(self.params.n, self.params.f, instance, self.coin)
            state.bas[instance.proposer] = inst
        return inst

    def _epoch(self, epoch: int) -> EpochState:
        state = self.epochs.get(epoch)
        if state is None:
            state = EpochState(epoch)
            self.epochs[epoch] = state
        return state

    # ------------------------------------------------------------ proposing

    def _maybe_propose(self, now_us: int):
        while self._propose_ready(now_us):
            self._begin_epoch(now_us)

    def _propose_ready(self, now_us: int) -> bool:
        e = self.next_proposal_epoch
        if self.freeze_epoch is not None and e > self.freeze_epoch:
            return False
        if e > 1:
            if self.phase1_done_through < e - 1:
                return False
            if self.varray[self.node_id] < e - 1:
                return False          # own previous dispersal not complete
        if self.policy.gate_on_retrieval and self.next_deliver < e:
            return False
        if self.freeze_epoch is not None:
            return True               # draining: flush up to the cutoff
        if self.queue_bytes >= self.policy.size_threshold_bytes:
            return True
        return now_us - self.last_proposal_us >= self.policy.delay_threshold_us

    def _begin_epoch(self, now_us: int):
        e = self.next_proposal_epoch
        self.next_proposal_epoch = e + 1
        self.last_proposal_us = now_us
        self.proposal_times_us.append(now_us)
        state = self._epoch(e)
        state.proposed = True

        lag = max(0, (e - 1) - (self.next_deliver - 1))
        suppress = ((self.policy.coupled_spam_guard and lag > 0)
                    or (self.policy.lag_limit_epochs is not None
                        and lag > self.policy.lag_limit_epochs)
                    or (self.freeze_txs_epoch is not None
                        and e > self.freeze_txs_epoch))
        txs, meta = self._drain_batch() if not suppress else ([], [])
        block = wire.encode_block(tuple(self.varray), txs)
        self.own_blocks[e] = block
        self.own_tx_meta[e] = meta
        self.batch_sizes.append(len(block))

        instance = InstanceId(e, self.node_id)
        _, sends = self.encode_fn(block, instance)
        for dest, chunk_msg in sends:
            self._send(instance, chunk_msg, DISPERSAL, dest=dest)
        self._drain_local(now_us)

    def _encode_plain(self, block: bytes, instance: InstanceId):
        return vid.disperse(block, self.params, instance)

    def _drain_batch(self):
        txs, meta = [], []
        budget = self.policy.max_block_bytes - wire.block_size(self.params.n, [])
        while self.tx_queue:
            tx, t = self.tx_queue[0]
            if 4 + len(tx) > budget:
                break
            budget -= 4 + len(tx)
            self.tx_queue.popleft()
            self.queue_bytes -= len(tx)
            txs.append(tx)
            meta.append((t, len(tx)))
        return txs, meta

    # ----------------------------------------------------- protocol events

    def _on_vid_complete(self, now_us: int, epoch: int, proposer: int):
        self.completed[proposer].add(epoch)
        while self.varray[proposer] + 1 in self.completed[proposer]:
            self.varray[proposer] += 1
            self.completed[proposer].discard(self.varray[proposer])
        state = self._epoch(epoch)
        if proposer not in state.ba_inputs:
            self._ba_input(now_us, epoch, proposer, 1)
        self._maybe_propose(now_us)   # own-dispersal gate may have opened

    def _ba_input(self, now_us: int, epoch: int, proposer: int, bit: int):
        state = self._epoch(epoch)
        state.ba_inputs[proposer] = bit
        inst = self._ba(InstanceId(epoch, proposer))
        broadcasts, directs, output = inst.input(bit)
        instance = InstanceId(epoch, proposer)
        for p in broadcasts:
            self._send(instance, p, DISPERSAL)
        for dest, p in directs:
            self._send(instance, p, DISPERSAL, dest=dest)
        if output is not None:
            self._on_ba_output(now_us, epoch, proposer, output)

    def _on_ba_output(self, now_us: int, epoch: int, proposer: int, bit: int):
        state = self._epoch(epoch)
        if proposer in state.outputs:
            return
        state.outputs[proposer] = bit
        if bit == 1:
            state.ones_count += 1
            if state.ones_count == self.params.quorum:
                for j in range(self.params.n):
                    if j not in state.ba_inputs:
                        self._ba_input(now_us, epoch, j, 0)
        if len(state.outputs) == self.params.n and state.s_set is None:
            state.s_set = tuple(sorted(j for j, b in state.outputs.items() if b))
            state.phase = "retrieving"
            self.s_lists[epoch] = list(state.s_set)
            if self.phase1_done_through == epoch - 1:
                frontier = epoch
                while (frontier + 1 in self.epochs
                       and self.epochs[frontier + 1].s_set is not None):
                    frontier += 1
                self.phase1_done_through = frontier
            self._advance_retrieval(now_us)
            self._maybe_propose(now_us)

    # ------------------------------------------------------------ retrieval

    def _on_return(self, now_us: int, instance: InstanceId, payload, sender: int):
        key = (instance.epoch, instance.proposer)
        retriever = self.retrievers.get(key)
        if retriever is None or key in self.results:
            return
        result = retriever.on_return(payload, sender)
        if result is not None:
            self.results[key] = result
            del self.retrievers[key]
            if self.policy.cancel_enabled:
                self._send(instance, Cancel(), RETRIEVAL)
            self._advance_retrieval(now_us)

    def _start_retrieval(self, now_us: int, key: tuple[int, int]):
        if key in self.retrieval_started or key in self.results:
            return
        self.retrieval_started.add(key)
        epoch, j = key
        if j == self.node_id and epoch in self.own_blocks:
            # A correct proposer's committed root is its own block's root.
            self.results[key] = self.own_blocks[epoch]
            return
        instance = InstanceId(epoch, j)
        retriever = VidRetriever(self.params, instance, verify=self.verify,
                                 decode_check=self.decode_check)
        self.retrievers[key] = retriever
        self._send(instance, RequestChunk(), RETRIEVAL)

    def _advance_retrieval(self, now_us: int):
        if self._advancing:
            return
        self._advancing = True
        try:
            progressed = True
            while progressed:
                progressed = False
                window_end = self.next_deliver + self.policy.retrieval_window
                for e in range(self.next_deliver, window_end):
                    if e in self.s_lists:
                        for j in self.s_lists[e]:
                            self._start_retrieval(now_us, (e, j))
                    if e in self.plans:
                        for key in self.plans[e]:
                            self._start_retrieval(now_us, key)

                e = self.next_deliver
                if e not in self.s_lists:
                    break
                s_list = self.s_lists[e]
                if any((e, j) not in self.results for j in s_list):
                    break
                if e not in self.plans:
                    self._compute_plan(e)
                    progressed = True
                    continue
                if any(key not in self.results for key in self.plans[e]):
                    break
                self._deliver_epoch(now_us, e)
                progressed = True
        finally:
            self._advancing = False

    def _compute_plan(self, e: int):
        s_list = self.s_lists[e]
        for j in s_list:
            self.claimed.add((e, j))
        if not self.policy.linking_enabled:
            self.plans[e] = []
            return
        obs = [observation_of(self.results[(e, j)], self.params.n)
               for j in s_list]
        estimate = compute_estimate(obs, self.params.f)
        self.epoch_estimates[e] = estimate
        plan = []
        for j in range(self.params.n):
            bound = estimate[j]
            if bound == INF:
                raise RuntimeError(
                    f"estimate for node {j} at epoch {e} is unbounded; "
                    f"more than f inconsistent observations in the commit set")
            d = self.link_floor[j]
            while d <= bound:
                if (d, j) not in self.claimed:
                    plan.append((d, j))
                    self.claimed.add((d, j))
                d += 1
            floor = self.link_floor[j]
            while (floor, j) in self.claimed:
                self.claimed.discard((floor, j))
                floor += 1
            self.link_floor[j] = floor
        plan.sort()
        self.plans[e] = plan

    def _deliver_epoch(self, now_us: int, e: int):
        state = self._epoch(e)
        for j in self.s_lists[e]:
            if (e, j) not in self.delivered_set:
                self._deliver_block(now_us, (e, j), delivered_at=e, linked=False)
        for key in self.plans[e]:
            if key not in self.delivered_set:
                self._deliver_block(now_us, key, delivered_at=e, linked=True)
        state.phase = "delivered"
        self.next_deliver = e + 1
        self._maybe_propose(now_us)

    def _deliver_block(self, now_us: int, key: tuple[int, int],
                       delivered_at: int, linked: bool):
        self.delivered_set.add(key)
        epoch, proposer = key
        result = self.results[key]
        placeholder = result == BAD_UPLOADER
        txs: list[bytes] = []
        if not placeholder:
            parsed = wire.decode_block(result, expect_n=self.params.n)
            if parsed is None:
                placeholder = True
            else:
                txs = parsed[1]
        payload_bytes = sum(len(tx) for tx in txs)
        block_hash = hashlib.sha256(PLACEHOLDER if placeholder else result).digest()
        entry = LogEntry(epoch, proposer, payload_bytes, len(txs), block_hash,
                         linked, placeholder, delivered_at)
        self.delivered_slot[key] = delivered_at
        self.log.append(entry)
        self._log_hash.update(epoch.to_bytes(8, "big")
                              + proposer.to_bytes(2, "big") + block_hash)
        self.delivered_payload_bytes += payload_bytes
        if proposer == self.node_id and not placeholder:
            for submit_us, _ in self.own_tx_meta.get(epoch, ()):
                self.latencies_us.append(now_us - submit_us)
        if self.app_deliver is not None:
            self.app_deliver(epoch, proposer, txs, linked, placeholder)

    # ---------------------------------------------------------------- GC

    def gc_below(self, upto: int):
        """Reclaim state no peer can need again, given every correct node
        has delivered all epochs ``<= upto``. Agreement scaffolding for
        those epochs goes entirely; a dispersal instance is only dropped
        once its *delivery slot* is covered, because an old undelivered
        block can still be claimed by a much later epoch's linking plan and
        its chunks must stay servable until then."""
        done = [k for k, slot in self.delivered_slot.items() if slot <= upto]
        for key in done:
            del self.delivered_slot[key]
            e, j = key
            state = self.epochs.get(e)
            if state is not None:
                state.servers.pop(j, None)
            self.results.pop(key, None)
            self.retrievers.pop(key, None)
            self.retrieval_started.discard(key)
            self.delivered_set.discard(key)
            if j == self.node_id:
                self.own_blocks.pop(e, None)
                self.own_tx_meta.pop(e, None)
        for e in [e for e in self.epochs if e <= upto]:
            state = self.epochs[e]
            state.bas.clear()
            state.ba_inputs.clear()
            if not state.servers:
                del self.epochs[e]
        for e in [e for e in self.s_lists if e <= upto]:
            del self.s_lists[e]
            self.plans.pop(e, None)
        if upto > self.gc_frontier:
            self.gc_frontier = upto
