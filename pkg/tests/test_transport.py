"""TCP node process: cluster agreement, reconnection, auth, admin plumbing."""
import asyncio
import json
import os
import socket
from collections import Counter

import pytest

from vidbft import transport
from vidbft.core import ProposerPolicy
from vidbft.transport import NodeConfig, NodeProcess

SECRET = bytes(range(32))


def free_ports(count):
    socks, ports = [], []
    for _ in range(count):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports


def make_configs(n, f, policy=None, data_root=None):
    addrs = [f"127.0.0.1:{p}" for p in free_ports(n)]
    configs = []
    for i in range(n):
        configs.append(NodeConfig(
            node_id=i, n=n, f=f, listen=addrs[i],
            peers={j: addrs[j] for j in range(n) if j != i},
            secret=SECRET, policy=policy or ProposerPolicy(),
            data_dir=None if data_root is None
            else os.path.join(data_root, f"node{i}")))
    return configs, addrs


async def start_nodes(configs, skip=()):
    nodes = {}
    for config in configs:
        if config.node_id in skip:
            continue
        node = NodeProcess(config)
        await node.start()
        nodes[config.node_id] = node
    return nodes


async def stop_nodes(nodes):
    for node in nodes.values():
        await node.stop()


async def poll_until(addrs, predicate, timeout_s=30.0):
    """Status-poll the given addresses until predicate(stats) holds."""
    deadline = asyncio.get_running_loop().time() + timeout_s
    while True:
        stats = []
        for addr in addrs:
            try:
                stats.append(await transport.node_status(addr, SECRET))
            except (ConnectionError, OSError, asyncio.IncompleteReadError):
                stats = None
                break
        if stats is not None and predicate(stats):
            return stats
        if asyncio.get_running_loop().time() > deadline:
            raise AssertionError(f"cluster did not converge; last={stats}")
        await asyncio.sleep(0.2)


def delivered_digests(data_dir):
    out = Counter()
    with open(os.path.join(data_dir, "delivered.log")) as handle:
        for line in handle:
            entry = json.loads(line)
            assert not entry["placeholder"]
            out.update(entry["txs"])
    return out


# --------------------------------------------------------------- clusters

def test_cluster_delivers_every_acked_tx_exactly_once(tmp_path):
    async def scenario():
        configs, addrs = make_configs(4, 1, data_root=str(tmp_path))
        nodes = await start_nodes(configs)
        try:
            txs = [f"tx-{i}-{os.urandom(6).hex()}".encode()
                   for i in range(300)]
            accepted = 0
            for i in range(0, 300, 75):
                a, _ = await transport.submit_txs(
                    addrs[(i // 75) % 4], SECRET, txs[i:i + 75])
                accepted += a
            assert accepted == 300
            total = sum(len(tx) for tx in txs)
            stats = await poll_until(addrs, lambda st: all(
                s["delivered_payload_bytes"] >= total
                and s["retrieval_lag"] == 0 for s in st))
            assert len({s["log_hash"] for s in stats}) == 1
        finally:
            await stop_nodes(nodes)
        import hashlib
        want = Counter(hashlib.sha256(tx).hexdigest() for tx in txs)
        for config in configs:
            assert delivered_digests(config.data_dir) == want

    asyncio.run(scenario())


def test_offline_peer_does_not_block_and_catches_up_on_join():
    async def scenario():
        configs, addrs = make_configs(4, 1)
        nodes = await start_nodes(configs, skip=(3,))
        try:
            txs = [f"t{i}".encode() * 10 for i in range(60)]
            accepted, _ = await transport.submit_txs(addrs[0], SECRET, txs)
            assert accepted == 60
            total = sum(len(tx) for tx in txs)
            live = addrs[:3]
            await poll_until(live, lambda st: all(
                s["delivered_payload_bytes"] >= total for s in st))

            # Late join: queued frames replay, the newcomer converges on the
            # identical log (its early epochs arrive via linked delivery).
            nodes[3] = NodeProcess(configs[3])
            await nodes[3].start()
            stats = await poll_until(addrs, lambda st: (
                len({s["log_hash"] for s in st}) == 1
                and st[3]["delivered_payload_bytes"] >= total))
        finally:
            await stop_nodes(nodes)
        assert stats[3]["retrieval_lag"] == 0

    asyncio.run(scenario())


# ------------------------------------------------------------ small parts

def test_wrong_secret_is_refused():
    async def scenario():
        configs, addrs = make_configs(4, 1)
        nodes = await start_nodes(configs, skip=(1, 2, 3))
        try:
            with pytest.raises((ConnectionError, asyncio.IncompleteReadError,
                                EOFError)):
                await transport.submit_txs(addrs[0], b"wrong" * 6 + b"xy",
                                           [b"tx"])
        finally:
            await stop_nodes(nodes)

    asyncio.run(scenario())


def test_oversized_tx_and_full_queue_are_refused():
    async def scenario():
        policy = ProposerPolicy(queue_cap_txs=5,
                                delay_threshold_us=60_000_000)
        configs, addrs = make_configs(4, 1, policy=policy)
        nodes = await start_nodes(configs, skip=(1, 2, 3))
        try:
            accepted, _ = await transport.submit_txs(
                addrs[0], SECRET, [os.urandom(70 * 1024)])
            assert accepted == 0
            accepted, queue_len = await transport.submit_txs(
                addrs[0], SECRET, [b"x" * 10] * 20)
            assert accepted == 5 and queue_len == 5
        finally:
            await stop_nodes(nodes)

    asyncio.run(scenario())


def test_status_reports_protocol_positions():
    async def scenario():
        configs, addrs = make_configs(4, 1)
        nodes = await start_nodes(configs)
        try:
            stats = await poll_until(addrs, lambda st: all(
                s["proposed_through"] >= 3 for s in st))
            for s in stats:
                assert set(s) >= {"node", "proposed_through",
                                  "delivered_through", "log_hash",
                                  "retrieval_lag", "queue_len", "proposals"}
        finally:
            await stop_nodes(nodes)

    asyncio.run(scenario())


def test_config_file_roundtrip(tmp_path):
    configs, _ = make_configs(4, 1)
    path = tmp_path / "node2.json"
    path.write_text(transport.config_json(
        configs[2], policy_fields={"max_tx_bytes": 1000}))
    loaded = NodeConfig.from_file(str(path))
    assert loaded.node_id == 2
    assert loaded.peers == configs[2].peers
    assert loaded.secret == SECRET
    assert loaded.policy.max_tx_bytes == 1000


def test_config_rejects_incomplete_peer_list():
    with pytest.raises(ValueError):
        NodeConfig(node_id=0, n=4, f=1, listen="127.0.0.1:1",
                   peers={1: "a", 2: "b"}, secret=SECRET)
