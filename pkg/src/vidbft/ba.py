"""Signature-free binary Byzantine agreement (common-coin rounds).

Round structure per instance: broadcast Bval(r, est); relay a Bval value
once it has f+1 distinct senders; at 2f+1 it enters bin_values[r], and the
first entrant triggers Aux(r, b). Once n-f Aux senders all carry bits
inside bin_values[r], let V be that bit set and flip the shared coin:

    V == {b} and b == coin  ->  decide b
    V == {b} and b != coin  ->  est = b, next round
    V == {0, 1}             ->  est = coin, next round

Decided(b) is a terminal shortcut: it counts as the sender's Bval/Aux vote
for b in every round (a decided node would vote b forever), f+1 of them
decide the receiver outright, and halted nodes answer any late traffic
with one Decided(b) per peer so stragglers cannot stall on quorums thinned
by halting. A decided node relays for one extra round, then halts; at that
moment it also answers every peer whose ahead-of-round traffic is still
sitting in the future buffer — such a peer may be stalled on a thinned
quorum and never send again, so waiting for its next message would leave
it stuck forever.

Messages for rounds ahead of the local one are buffered (bounded); on
overflow the oldest are dropped, which only ever delays, never corrupts.
"""
from __future__ import annotations

import hashlib
from typing import NamedTuple, Optional

from .vid import InstanceId

ROUNDS_MAX = 64


class Bval(NamedTuple):
    round: int
    bit: int


class Aux(NamedTuple):
    round: int
    bit: int


class Decided(NamedTuple):
    bit: int


class CoinSource:
    """Deterministic per-(instance, round) coin shared by all nodes."""

    __slots__ = ("seed",)

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("coin seed must be 32 bytes")
        self.seed = seed

    def value(self, instance: InstanceId, rnd: int) -> int:
        return coin_value(self.seed, instance, rnd)


def coin_value(seed: bytes, instance: InstanceId, rnd: int) -> int:
    material = (seed + instance.epoch.to_bytes(8, "big")
                + instance.proposer.to_bytes(2, "big") + rnd.to_bytes(4, "big"))
    return hashlib.sha256(material).digest()[-1] & 1


class BaInstance:
    """One node's state for one agreement instance."""

    __slots__ = (
        "n", "f", "instance", "coin", "round", "estimate", "started",
        "bval_senders", "aux_first", "perm", "bin_values", "bval_sent",
        "aux_sent", "decided", "decide_round", "output_emitted", "halted",
        "replied", "future", "future_cap", "buffered_senders",
    )

    def __init__(self, n: int, f: int, instance: InstanceId, coin: CoinSource):
        self.n = n
        self.f = f
        self.instance = instance
        self.coin = coin
        self.round = 0
        self.estimate: Optional[int] = None
        self.started = False
        self.bval_senders: dict[int, tuple[set, set]] = {}
        self.aux_first: dict[int, dict[int, int]] = {}
        self.perm: tuple[set, set] = (set(), set())
        self.bin_values: dict[int, int] = {}
        self.bval_sent: dict[int, int] = {}
        self.aux_sent: set[int] = set()
        self.decided: Optional[int] = None
        self.decide_round: Optional[int] = None
        self.output_emitted = False
        self.halted = False
        self.replied: set[int] = set()
        self.future: list[tuple] = []
        self.future_cap = 64 * n
        self.buffered_senders: set[int] = set()

    # -- public API ---------------------------------------------------------

    def input(self, bit: int):
        """Set the initial estimate; returns (broadcasts, directs, output).
        Broadcasts must be self-delivered by the driver like any other
        node's."""
        if self.started or self.halted:
            return [], [], None
        self.started = True
        self.estimate = self.decided if self.decided is not None else bit & 1
        out = self._send_bval(0, self.estimate)
        out.extend(self._drain_future())
        out.extend(self._recheck_thresholds())
        out2, output = self._progress()
        directs = self._halt_replies() if self.halted else []
        return out + out2, directs, output

    def handle(self, payload, sender: int):
        """Returns (broadcasts, directs, output) where output is the decided
        bit the first time the local node decides, else None."""
        if self.halted:
            return [], self._late_reply(sender), None
        if not self.started:
            # A correct node only joins once its own input is set; early
            # traffic waits in the future buffer.
            if type(payload) in (Bval, Aux):
                self._buffer(payload, sender)
                return [], [], None
            if type(payload) is not Decided:
                return [], [], None
            out = self._on_decided(payload.bit & 1, sender)
            out2, output = self._progress()
            return out + out2, [], output
        out: list = []
        directs: list = []
        if type(payload) is Decided:
            out.extend(self._on_decided(payload.bit & 1, sender))
        elif type(payload) is Bval:
            if payload.round > self.round:
                self._buffer(payload, sender)
            else:
                out.extend(self._on_bval(payload.round, payload.bit & 1, sender))
        elif type(payload) is Aux:
            if payload.round > self.round:
                self._buffer(payload, sender)
            else:
                self._on_aux(payload.round, payload.bit & 1, sender)
        else:
            return [], [], None
        out2, output = self._progress()
        out.extend(out2)
        if self.halted:
            directs.extend(self._halt_replies())
            directs.extend(self._late_reply(sender))
        return out, directs, output

    # -- message ingestion --------------------------------------------------

    def _buffer(self, payload, sender: int):
        self.buffered_senders.add(sender)
        if len(self.future) >= self.future_cap:
            self.future.pop(0)
        self.future.append((payload.round, type(payload) is Aux, payload, sender))

    def _drain_future(self):
        out = []
        keep = []
        for rnd, _is_aux, payload, sender in self.future:
            if rnd > self.round:
                keep.append((rnd, _is_aux, payload, sender))
            elif type(payload) is Bval:
                out.extend(self._on_bval(rnd, payload.bit & 1, sender))
            else:
                self._on_aux(rnd, payload.bit & 1, sender)
        self.future = keep
        return out

    def _on_bval(self, rnd: int, bit: int, sender: int):
        sets = self.bval_senders.setdefault(rnd, (set(), set()))
        if sender in sets[bit]:
            return []
        sets[bit].add(sender)
        return self._after_bval_growth(rnd, bit)

    def _after_bval_growth(self, rnd: int, bit: int):
        out = []
        count = len(self.bval_senders[rnd][bit] | self.perm[bit])
        if count >= self.f + 1 and not (self.bval_sent.get(rnd, 0) >> bit) & 1:
            out.extend(self._send_bval(rnd, bit))
        if count >= 2 * self.f + 1 and not (self.bin_values.get(rnd, 0) >> bit) & 1:
            self.bin_values[rnd] = self.bin_values.get(rnd, 0) | (1 << bit)
            if rnd not in self.aux_sent:
                self.aux_sent.add(rnd)
                out.append(Aux(rnd, bit))
        return out

    def _on_aux(self, rnd: int, bit: int, sender: int):
        self.aux_first.setdefault(rnd, {}).setdefault(sender, bit)

    def _on_decided(self, bit: int, sender: int):
        if sender in self.perm[0] or sender in self.perm[1]:
            return []
        self.perm[bit].add(sender)
        if len(self.perm[bit]) >= self.f + 1 and self.decided is None:
            self._decide(bit)
            return []
        # Virtual votes may complete thresholds for the current round.
        return self._recheck_thresholds()

    def _recheck_thresholds(self):
        out = []
        self.bval_senders.setdefault(self.round, (set(), set()))
        for b in (0, 1):
            out.extend(self._after_bval_growth(self.round, b))
        return out

    # -- round machinery ----------------------------------------------------

    def _send_bval(self, rnd: int, bit: int):
        mask = self.bval_sent.get(rnd, 0)
        if (mask >> bit) & 1:
            return []
        self.bval_sent[rnd] = mask | (1 << bit)
        return [Bval(rnd, bit)]

    def _progress(self):
        """Advance rounds / decide as far as current knowledge allows."""
        out: list = []
        while not self.halted and self.started:
            verdict = self._round_verdict(self.round)
            if verdict is None:
                break
            if self.decided is not None and self.round > self.decide_round:
                # The one post-decision relay round has run its course.
                self.halted = True
                break
            v_bits, coin = verdict
            if self.decided is None:
                if v_bits != (0, 1) and v_bits[0] == coin:
                    self._decide(coin)
                else:
                    self.estimate = v_bits[0] if v_bits != (0, 1) else coin
            self.round += 1
            if self.round > ROUNDS_MAX:
                raise RuntimeError(
                    f"agreement {self.instance} exceeded {ROUNDS_MAX} rounds")
            out.extend(self._send_bval(self.round, self.estimate))
            out.extend(self._drain_future())
            out.extend(self._recheck_thresholds())
        output = None
        if self.decided is not None and not self.output_emitted:
            self.output_emitted = True
            output = self.decided
        return out, output

    def _round_verdict(self, rnd: int):
        """If the Aux quorum condition holds, return (sorted V bits, coin)."""
        bins = self.bin_values.get(rnd, 0)
        if not bins:
            return None
        qual: dict[int, int] = {}
        for sender, bit in self.aux_first.get(rnd, {}).items():
            if (bins >> bit) & 1:
                qual[sender] = bit
        for b in (0, 1):
            if (bins >> b) & 1:
                for sender in self.perm[b]:
                    qual.setdefault(sender, b)
        if len(qual) < self.n - self.f:
            return None
        v_bits = tuple(sorted(set(qual.values())))
        return v_bits, self.coin.value(self.instance, rnd)

    def _decide(self, bit: int):
        if self.decided is None:
            self.decided = bit
            self.decide_round = self.round
            self.estimate = bit

    def _late_reply(self, sender: int):
        if sender in self.replied or sender < 0:
            return []
        self.replied.add(sender)
        return [(sender, Decided(self.decided))]

    def _halt_replies(self):
        """Answer everyone whose traffic was ever future-buffered: those
        peers were ahead of the halt round and may now be wedged."""
        out = []
        for sender in sorted(self.buffered_senders):
            out.extend(self._late_reply(sender))
        return out
