"""Untimed message-pool driver for protocol testing.

Keeps every in-flight message in a pool and delivers them one at a time in
an order chosen by a pluggable scheduler, which models an asynchronous
network whose adversary controls interleaving but must eventually deliver
everything between correct nodes. Byzantine behaviour lives in the node
objects themselves (a node is anything with ``receive``), so tests compose
a mix of correct adapters and misbehaving stand-ins and then exhaust the
pool under many random schedules.

Node contract: ``receive(sender, payload) -> [(dest, payload)]`` where
``dest`` is a node id or BROADCAST. Broadcasts are fanned out to every
node, including the sender (self-delivery goes through the pool like any
other message).
"""
from __future__ import annotations

import random
from typing import Callable, Optional

BROADCAST = -1


class Pool:
    """In-flight messages plus the delivery loop."""

    def __init__(self, nodes: dict, scheduler: Optional[Callable] = None,
                 rng: Optional[random.Random] = None):
        self.nodes = nodes
        self.rng = rng or random.Random(0)
        self.scheduler = scheduler or uniform_scheduler(self.rng)
        self.queue: list[tuple[int, int, object]] = []  # (dest, sender, payload)
        self.delivered = 0

    def send(self, dest: int, sender: int, payload) -> None:
        if dest in self.nodes:
            self.queue.append((dest, sender, payload))

    def broadcast(self, sender: int, payload) -> None:
        for dest in self.nodes:
            self.queue.append((dest, sender, payload))

    def post(self, sender: int, outgoing) -> None:
        """File a node's outgoing [(dest, payload)] list into the pool."""
        for dest, payload in outgoing:
            if dest == BROADCAST:
                self.broadcast(sender, payload)
            else:
                self.send(dest, sender, payload)

    def step(self) -> bool:
        if not self.queue:
            return False
        index = self.scheduler(self.queue)
        dest, sender, payload = self.queue.pop(index)
        self.delivered += 1
        out = self.nodes[dest].receive(sender, payload)
        if out:
            self.post(dest, out)
        return True

    def run(self, max_steps: int = 2_000_000) -> int:
        steps = 0
        while self.queue:
            if steps >= max_steps:
                raise RuntimeError(f"pool did not drain within {max_steps} steps")
            self.step()
            steps += 1
        return steps


def uniform_scheduler(rng: random.Random):
    def pick(queue):
        return rng.randrange(len(queue))
    return pick


def starve_scheduler(rng: random.Random, starved: set, until_delivered: int):
    """Avoid delivering to ``starved`` nodes while other traffic exists,
    until the pool has delivered ``until_delivered`` messages overall. Models
    an adversary holding a subset of nodes far behind the rest."""
    count = 0

    def pick(queue):
        nonlocal count
        count += 1
        if count <= until_delivered:
            live = [i for i, (dest, _, _) in enumerate(queue) if dest not in starved]
            if live:
                return live[rng.randrange(len(live))]
        return rng.randrange(len(queue))
    return pick


def fifo_scheduler(queue) -> int:
    return 0


class SilentNode:
    """Crashed from the start: absorbs everything."""

    def receive(self, sender, payload):
        return []


class FuncNode:
    """Byzantine behaviour as a plain function of (sender, payload)."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def receive(self, sender, payload):
        return self.fn(sender, payload) or []


class VidNode:
    """Correct dispersal server, optionally also running a retrieval."""

    def __init__(self, server, retriever=None,
                 on_complete: Optional[Callable] = None):
        from .vid import ReturnChunk
        self._return_type = ReturnChunk
        self.server = server
        self.retriever = retriever
        self.on_complete = on_complete

    def receive(self, sender, payload):
        out = []
        if type(payload) is self._return_type and self.retriever is not None:
            self.retriever.on_return(payload, sender)
            return out
        was_complete = self.server.completed
        broadcasts, directs = self.server.handle(payload, sender)
        out += [(BROADCAST, p) for p in broadcasts]
        out += directs
        if not was_complete and self.server.completed and self.on_complete:
            out += self.on_complete(self) or []
        return out

    def start_retrieval(self, retriever):
        from .vid import RequestChunk
        self.retriever = retriever
        return [(BROADCAST, RequestChunk())]


class BaNode:
    """Correct agreement participant; records its output."""

    def __init__(self, inst):
        self.inst = inst
        self.output: Optional[int] = None

    def start(self, bit: int):
        broadcasts, directs, output = self.inst.input(bit)
        if output is not None:
            self.output = output
        return [(BROADCAST, p) for p in broadcasts] + directs

    def receive(self, sender, payload):
        broadcasts, directs, output = self.inst.handle(payload, sender)
        if output is not None:
            self.output = output
        return [(BROADCAST, p) for p in broadcasts] + directs
