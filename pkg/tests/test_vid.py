"""Dispersal/retrieval state machines under adversarial schedules and
Byzantine senders, driven by the untimed message pool."""
import random

import pytest
from hypothesis import given, settings, strategies as st

from vidbft import codec, vid
from vidbft.codec import Params
from vidbft.harness import (BROADCAST, FuncNode, Pool, SilentNode, VidNode,
                            fifo_scheduler, starve_scheduler, uniform_scheduler)
from vidbft.vid import (BAD_UPLOADER, Chunk, GotChunk, InstanceId, Ready,
                        RequestChunk, ReturnChunk, VidRetriever, VidServer)

INST = InstanceId(epoch=1, proposer=0)


def make_net(params, seed, byzantine=None, scheduler=None):
    rng = random.Random(seed)
    nodes = {}
    for i in range(params.n):
        if byzantine and i in byzantine:
            nodes[i] = byzantine[i]
        else:
            nodes[i] = VidNode(VidServer(params, INST, i))
    pool = Pool(nodes, scheduler=scheduler(rng) if scheduler else None, rng=rng)
    return nodes, pool


def correct_servers(nodes):
    return {i: a.server for i, a in nodes.items() if isinstance(a, VidNode)}


def disperse_into(pool, block, params):
    root, sends = vid.disperse(block, params, INST)
    pool.post(INST.proposer, sends)
    return root


@settings(max_examples=25)
@given(st.integers(0, 10**9))
def test_benign_dispersal_completes_everywhere(seed):
    params = Params(n=4, f=1)
    nodes, pool = make_net(params, seed)
    root = disperse_into(pool, b"payload-" + seed.to_bytes(4, "big"), params)
    pool.run()
    for server in correct_servers(nodes).values():
        assert server.completed
        assert server.chunk_root == root


@settings(max_examples=15)
@given(st.integers(0, 10**9))
def test_dispersal_with_f_silent_servers(seed):
    params = Params(n=7, f=2)
    byz = {5: SilentNode(), 6: SilentNode()}
    nodes, pool = make_net(params, seed, byzantine=byz)
    root = disperse_into(pool, b"block with silent minority", params)
    pool.run()
    for server in correct_servers(nodes).values():
        assert server.completed and server.chunk_root == root


@settings(max_examples=15)
@given(st.integers(0, 10**9))
def test_retrieval_returns_dispersed_block(seed):
    params = Params(n=7, f=2)
    block = bytes(random.Random(seed).randbytes(1000))
    nodes, pool = make_net(params, seed)
    disperse_into(pool, block, params)
    pool.run()
    results = {}
    for i in (0, 3):
        retriever = VidRetriever(params, INST)
        results[i] = retriever
        pool.post(i, nodes[i].start_retrieval(retriever))
    pool.run()
    assert results[0].result == block
    assert results[3].result == block


def test_retrieval_before_completion_is_deferred_then_served():
    params = Params(n=4, f=1)
    nodes, pool = make_net(params, 0, scheduler=lambda rng: fifo_scheduler)
    retriever = VidRetriever(params, INST)
    pool.post(2, nodes[2].start_retrieval(retriever))
    for _ in range(params.n):       # deliver the RequestChunk fan-out first
        pool.step()
    for server in correct_servers(nodes).values():
        assert 2 in server.pending_requests
        assert not server.completed
    disperse_into(pool, b"late block", params)
    pool.run()
    assert retriever.result == b"late block"
    for server in correct_servers(nodes).values():
        assert not server.pending_requests


@settings(max_examples=10)
@given(st.integers(0, 10**9))
def test_starved_node_still_completes(seed):
    params = Params(n=4, f=1)
    rng = random.Random(seed)
    nodes = {i: VidNode(VidServer(params, INST, i)) for i in range(4)}
    pool = Pool(nodes, scheduler=starve_scheduler(rng, {3}, 60), rng=rng)
    root = disperse_into(pool, b"starvation schedule", params)
    pool.run()
    assert nodes[3].server.completed and nodes[3].server.chunk_root == root


def mixed_tree_attack(params, b1, b2, split):
    """Chunks from two different blocks, committed under one Merkle root.
    Proofs all verify, so dispersal can complete; no block re-encodes to
    this shard array, which retrieval must detect."""
    s1 = codec.encode(b1, params).shards
    s2 = codec.encode(b2, params).shards
    mixed = s1[:split] + s2[split:]
    root = codec.merkle_root(mixed)
    sends = [(i, Chunk(root, mixed[i], codec.merkle_prove(mixed, i)))
             for i in range(params.n)]
    return root, sends


@settings(max_examples=15)
@given(st.integers(0, 10**9), st.integers(1, 6))
def test_inconsistent_encoding_yields_bad_uploader_everywhere(seed, split):
    params = Params(n=7, f=2)
    nodes, pool = make_net(params, seed)
    root, sends = mixed_tree_attack(params, b"A" * 500, b"B" * 500, split)
    pool.post(INST.proposer, sends)
    pool.run()
    completed = [s for s in correct_servers(nodes).values() if s.completed]
    assert completed, "valid proofs + full delivery must still complete"
    assert all(s.chunk_root == root for s in completed)
    results = []
    for i in range(params.n):
        retriever = VidRetriever(params, INST)
        results.append(retriever)
        pool.post(i, nodes[i].start_retrieval(retriever))
    pool.run()
    for retriever in results:
        assert retriever.result == BAD_UPLOADER
        assert retriever.result == b"BAD_UPLOADER"


@settings(max_examples=15)
@given(st.integers(0, 10**9))
def test_no_two_correct_servers_complete_with_different_roots(seed):
    """Equivocating proposer: two blocks, each sent to part of the network."""
    params = Params(n=4, f=1)
    nodes, pool = make_net(params, seed)
    _, sends_a = vid.disperse(b"left block", params, INST)
    _, sends_b = vid.disperse(b"right block", params, INST)
    pool.post(0, [m for m in sends_a if m[0] in (0, 1)])
    pool.post(0, [m for m in sends_b if m[0] in (2, 3)])
    pool.run()
    roots = {s.chunk_root for s in correct_servers(nodes).values() if s.completed}
    assert len(roots) <= 1
    readys = {s.sent_ready_root for s in correct_servers(nodes).values()
              if s.sent_ready}
    assert len(readys) <= 1


def test_chunk_from_non_proposer_rejected():
    params = Params(n=4, f=1)
    server = VidServer(params, INST, 1)
    shards = codec.encode(b"x" * 40, params)
    root = codec.merkle_root(shards)
    good = Chunk(root, shards.shards[1], codec.merkle_prove(shards, 1))
    out, _ = server.handle(good, sender=2)
    assert out == [] and server.my_chunk is None
    out, _ = server.handle(good, sender=INST.proposer)
    assert out == [GotChunk(root)]


def test_first_valid_chunk_wins_and_bad_proofs_ignored():
    params = Params(n=4, f=1)
    server = VidServer(params, INST, 2)
    shards = codec.encode(b"y" * 40, params)
    root = codec.merkle_root(shards)
    bad = Chunk(root, b"junk" * 10, codec.merkle_prove(shards, 2))
    out, _ = server.handle(bad, sender=0)
    assert out == [] and server.my_chunk is None
    good = Chunk(root, shards.shards[2], codec.merkle_prove(shards, 2))
    out, _ = server.handle(good, sender=0)
    assert out == [GotChunk(root)]
    again = Chunk(root, shards.shards[2], codec.merkle_prove(shards, 2))
    out, _ = server.handle(again, sender=0)
    assert out == [] and server.my_chunk == shards.shards[2]


def test_duplicate_votes_do_not_double_count():
    params = Params(n=4, f=1)
    server = VidServer(params, INST, 3)
    root = b"\x01" * 32
    for _ in range(5):
        server.handle(GotChunk(root), sender=0)
        server.handle(Ready(root), sender=0)
    assert server.share_count[root] == 1
    assert server.ready_count[root] == 1
    assert not server.completed


def test_byzantine_votes_alone_cannot_complete():
    params = Params(n=7, f=2)
    server = VidServer(params, INST, 1)
    root = b"\x02" * 32
    for s in (4, 5):                      # only f distinct Byzantine senders
        server.handle(GotChunk(root), sender=s)
        server.handle(Ready(root), sender=s)
    assert not server.sent_ready and not server.completed


def test_ready_amplification_at_f_plus_one():
    params = Params(n=7, f=2)
    server = VidServer(params, INST, 1)
    root = b"\x03" * 32
    out, _ = server.handle(Ready(root), sender=2)
    assert out == []
    out, _ = server.handle(Ready(root), sender=3)
    assert out == []
    out, _ = server.handle(Ready(root), sender=4)   # f+1 = 3rd distinct sender
    assert out == [Ready(root)]
    assert server.sent_ready_root == root


def test_retriever_needs_k_distinct_valid_chunks():
    params = Params(n=7, f=2)
    shards = codec.encode(b"retrv" * 50, params)
    root = codec.merkle_root(shards)
    retriever = VidRetriever(params, INST)
    # k-1 distinct senders, plus one duplicate and one invalid: no decode yet
    for s in (0, 1):
        msg = ReturnChunk(root, shards.shards[s], codec.merkle_prove(shards, s))
        assert retriever.on_return(msg, s) is None
    dup = ReturnChunk(root, shards.shards[0], codec.merkle_prove(shards, 0))
    assert retriever.on_return(dup, 0) is None
    forged = ReturnChunk(root, b"nope", codec.merkle_prove(shards, 2))
    assert retriever.on_return(forged, 2) is None
    final = ReturnChunk(root, shards.shards[4], codec.merkle_prove(shards, 4))
    assert retriever.on_return(final, 4) == b"retrv" * 50


def test_retriever_decodes_from_parity_only_chunks():
    params = Params(n=7, f=2)
    block = b"parity path " * 9
    shards = codec.encode(block, params)
    root = codec.merkle_root(shards)
    retriever = VidRetriever(params, INST)
    got = None
    for s in (4, 5, 6):                   # all beyond k = 3: parity shards
        msg = ReturnChunk(root, shards.shards[s], codec.merkle_prove(shards, s))
        got = retriever.on_return(msg, s)
    assert got == block
