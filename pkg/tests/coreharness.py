"""Drives full consensus cores over the untimed message pool: network
interleaving is adversarial (pool scheduler) while time advances in
lock-step ticks so the batching gate opens for everyone together."""
from __future__ import annotations

import random

from vidbft.core import BROADCAST, Core, ProposerPolicy
from vidbft.harness import Pool


class Clock:
    def __init__(self):
        self.now_us = 0


class CoreNode:
    """Pool adapter: payloads on the wire are (instance, payload) pairs."""

    def __init__(self, core: Core, clock: Clock):
        self.core = core
        self.clock = clock

    def receive(self, sender, msg):
        instance, payload = msg
        self.core.on_message(self.clock.now_us, instance, payload, sender)
        return self.drain()

    def drain(self):
        out = [(o.dest, (o.instance, o.payload)) for o in self.core.outbox]
        self.core.outbox.clear()
        return out


class Cluster:
    def __init__(self, params, policy=None, seed=0, scheduler=None,
                 core_factory=None, coin_seed=b"\x11" * 32):
        self.params = params
        self.clock = Clock()
        self.rng = random.Random(seed)
        factory = core_factory or (lambda i: Core(
            i, params, policy or ProposerPolicy(), coin_seed))
        self.cores = {i: factory(i) for i in range(params.n)}
        self.nodes = {i: CoreNode(self.cores[i], self.clock)
                      for i in range(params.n)}
        self.pool = Pool(self.nodes, scheduler=scheduler, rng=self.rng)

    def start(self):
        for i, node in self.nodes.items():
            node.core.start(self.clock.now_us)
            self.pool.post(i, node.drain())

    def submit(self, i, txs):
        self.nodes[i].core.submit_txs(self.clock.now_us, txs)
        self.pool.post(i, self.nodes[i].drain())

    def tick(self, advance_us=150_000):
        self.clock.now_us += advance_us
        for i, node in self.nodes.items():
            node.core.on_tick(self.clock.now_us)
            self.pool.post(i, node.drain())

    def settle(self, max_steps=3_000_000):
        self.pool.run(max_steps)

    def run_rounds(self, rounds, advance_us=150_000):
        for _ in range(rounds):
            self.tick(advance_us)
            self.settle()

    def logs_identical(self, exclude=()):
        hashes = {c.log_hash() for i, c in self.cores.items()
                  if i not in exclude}
        return len(hashes) == 1
