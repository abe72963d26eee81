"""TCP driver for the consensus core.

The simulator and this module share one protocol implementation: the core
is a sans-io state machine and each driver just moves its frames. Per peer
we hold two outbound streams — one for dispersal+agreement traffic, one
for retrieval traffic — so bulk block downloads never queue ahead of the
small latency-critical votes on a single socket. The listening side
accepts those peer streams plus client connections: a framed transaction
channel (TxSubmit/TxAck) and a line-JSON admin channel reporting the
delivered-log hash, epoch positions, and retrieval lag.

Every link starts with a shared-key challenge MAC in both directions;
after that, frames travel in the canonical wire format and a frame whose
sender field disagrees with the authenticated peer is dropped. Outbound
connections reconnect with jittered exponential backoff; protocol state
lives entirely in the core and is unaffected by connection loss.

Concurrency: one asyncio loop per process; every core mutation happens in
the single pump task, which consumes an inbox fed by connection readers
and client sessions, and doubles as the batching timer (the core says
when it next wants a tick, the pump waits at most that long).

The decode-cancel optimization is forced off here: the wire enum carries
no cancel frame, so it stays a simulator-only measurement device.
"""
from __future__ import annotations

import asyncio
import hashlib
import hmac
import json
import os
import socket
import struct
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Optional

from . import wire
from .codec import Params
from .core import BROADCAST, DISPERSAL, Core, Outgoing, ProposerPolicy
from .vid import InstanceId

MAGIC = b"VIDB"
LINK_DISPERSAL = 0
LINK_RETRIEVAL = 1
LINK_CLIENT = 2
LINK_ADMIN = 3
CLIENT_ID = 0xFFFF

_HELLO = struct.Struct(">HB")    # sender id, link kind
HELLO_LEN = len(MAGIC) + 1 + _HELLO.size + 16 + 32
ACK_LEN = 16 + 32
HANDSHAKE_TIMEOUT_S = 5.0
BACKOFF_BASE_S = 0.05
BACKOFF_CAP_S = 2.0
TXS_PER_FRAME = 500


class HandshakeError(ConnectionError):
    pass


def _hello_mac(secret: bytes, sender: int, link: int, nonce: bytes) -> bytes:
    msg = MAGIC + bytes([wire.VERSION]) + _HELLO.pack(sender, link) + nonce
    return hmac.new(secret, msg, hashlib.sha256).digest()


def _ack_mac(secret: bytes, nonce_c: bytes, nonce_s: bytes) -> bytes:
    return hmac.new(secret, b"ack" + nonce_c + nonce_s, hashlib.sha256).digest()


async def _client_handshake(reader, writer, secret: bytes, sender: int,
                            link: int):
    nonce = os.urandom(16)
    writer.write(MAGIC + bytes([wire.VERSION]) + _HELLO.pack(sender, link)
                 + nonce + _hello_mac(secret, sender, link, nonce))
    await writer.drain()
    ack = await reader.readexactly(ACK_LEN)
    if not hmac.compare_digest(ack[16:], _ack_mac(secret, nonce, ack[:16])):
        raise HandshakeError("server failed authentication")


async def _server_handshake(reader, writer, secret: bytes):
    hello = await reader.readexactly(HELLO_LEN)
    if hello[:4] != MAGIC or hello[4] != wire.VERSION:
        raise HandshakeError("bad magic or version")
    sender, link = _HELLO.unpack_from(hello, 5)
    nonce_c = hello[8:24]
    if not hmac.compare_digest(hello[24:],
                               _hello_mac(secret, sender, link, nonce_c)):
        raise HandshakeError("client failed authentication")
    nonce_s = os.urandom(16)
    writer.write(nonce_s + _ack_mac(secret, nonce_c, nonce_s))
    await writer.drain()
    return sender, link


def _split_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host, int(port)


@dataclass
class NodeConfig:
    node_id: int
    n: int
    f: int
    listen: str                       # host:port
    peers: dict                       # node id -> host:port, the other n-1
    secret: bytes
    policy: ProposerPolicy = field(default_factory=ProposerPolicy)
    data_dir: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.node_id < self.n:
            raise ValueError("node_id out of range")
        expect = [j for j in range(self.n) if j != self.node_id]
        if sorted(self.peers) != expect:
            raise ValueError(f"peer list must cover exactly nodes {expect}")

    @classmethod
    def from_file(cls, path: str) -> "NodeConfig":
        with open(path) as handle:
            raw = json.load(handle)
        return cls(node_id=raw["node"], n=raw["n"], f=raw["f"],
                   listen=raw["listen"],
                   peers={int(k): v for k, v in raw["peers"].items()},
                   secret=bytes.fromhex(raw["secret"]),
                   policy=ProposerPolicy(**raw.get("policy", {})),
                   data_dir=raw.get("data_dir"))


def config_json(config: NodeConfig, policy_fields: Optional[dict] = None) -> str:
    """Serialize a config the way ``from_file`` reads it (test harnesses
    generate per-node files with this)."""
    return json.dumps({
        "node": config.node_id, "n": config.n, "f": config.f,
        "listen": config.listen,
        "peers": {str(k): v for k, v in config.peers.items()},
        "secret": config.secret.hex(),
        "policy": policy_fields or {},
        "data_dir": config.data_dir,
    }, indent=2)


def _now_us() -> int:
    return time.monotonic_ns() // 1000


def _frame_bytes(node_id: int, out: Outgoing) -> bytes:
    msg_type, body = wire.encode_body(out.payload)
    return wire.encode_frame(wire.WireFrame(
        msg_type, out.instance.epoch, out.instance.proposer, node_id, body))


class NodeProcess:
    """One protocol node: core + listener + per-peer outbound links."""

    def __init__(self, config: NodeConfig):
        self.config = config
        params = Params(config.n, config.f)
        policy = replace(config.policy, cancel_enabled=False)
        coin_seed = hashlib.sha256(b"coin" + config.secret).digest()
        self.core = Core(config.node_id, params, policy, coin_seed,
                         app_deliver=self._app_deliver)
        self.inbox: asyncio.Queue = asyncio.Queue()
        self.send_queues = {peer: (asyncio.Queue(), asyncio.Queue())
                            for peer in config.peers}
        self.server: Optional[asyncio.AbstractServer] = None
        self.tasks: list = []
        self._sessions: set = set()
        self.accepted_txs = 0
        self._delivered_file = None
        if config.data_dir is not None:
            os.makedirs(config.data_dir, exist_ok=True)
            self._delivered_file = open(
                os.path.join(config.data_dir, "delivered.log"), "a",
                buffering=1)

    # ----------------------------------------------------------- lifecycle

    async def start(self):
        host, port = _split_addr(self.config.listen)
        self.server = await asyncio.start_server(self._on_connection,
                                                 host, port)
        for peer, queues in self.send_queues.items():
            for link, queue in enumerate(queues):
                self.tasks.append(asyncio.create_task(
                    self._writer(peer, link, queue)))
        pump = asyncio.create_task(self._pump())
        pump.add_done_callback(self._pump_died)
        self.tasks.append(pump)

    def _pump_died(self, task):
        # The pump owns all protocol progress; if it dies the node is a
        # zombie that still answers status probes, so make the failure loud.
        if task.cancelled() or task.exception() is None:
            return
        import traceback
        print(f"node {self.config.node_id}: pump task crashed",
              file=sys.stderr)
        traceback.print_exception(task.exception(), file=sys.stderr)

    async def run(self):
        await self.start()
        try:
            await asyncio.gather(*self.tasks)
        finally:
            await self.stop()

    async def stop(self):
        for task in self.tasks:
            task.cancel()
        await asyncio.gather(*self.tasks, return_exceptions=True)
        self.tasks = []
        if self.server is not None:
            self.server.close()
        for task in list(self._sessions):
            task.cancel()
        await asyncio.gather(*self._sessions, return_exceptions=True)
        if self.server is not None:
            await self.server.wait_closed()
            self.server = None
        if self._delivered_file is not None:
            self._delivered_file.close()
            self._delivered_file = None

    # ---------------------------------------------------------- core pump

    async def _pump(self):
        core = self.core
        core.start(_now_us())
        self._flush()
        while True:
            deadline = core.next_deadline_us()
            now = _now_us()
            if deadline <= now:
                core.on_tick(now)
                self._flush()
                if core.next_deadline_us() > _now_us():
                    continue
                # Timer served but the proposal stays gated on peer
                # progress: only a message can change that, so wait
                # untimed. A zero timeout here would cancel the get()
                # before it could ever dequeue and starve the inbox.
                item = await self.inbox.get()
            else:
                try:
                    item = await asyncio.wait_for(self.inbox.get(),
                                                  (deadline - now) / 1e6)
                except asyncio.TimeoutError:
                    continue
            while True:
                self._apply(item)
                if self.inbox.empty():
                    break
                item = self.inbox.get_nowait()
            self._flush()

    def _apply(self, item):
        now = _now_us()
        if item[0] == "msg":
            _, instance, payload, sender = item
            self.core.on_message(now, instance, payload, sender)
        else:
            _, txs, reply = item
            accepted, queue_len = self.core.submit_txs(now, txs)
            self.accepted_txs += accepted
            if reply is not None and not reply.done():
                reply.set_result((accepted, queue_len))

    def _flush(self):
        outbox = self.core.outbox
        if not outbox:
            return
        self.core.outbox = []
        for out in outbox:
            data = _frame_bytes(self.config.node_id, out)
            link = LINK_DISPERSAL if out.traffic_class == DISPERSAL \
                else LINK_RETRIEVAL
            if out.dest == BROADCAST:
                for queues in self.send_queues.values():
                    queues[link].put_nowait(data)
            else:
                self.send_queues[out.dest][link].put_nowait(data)

    def _app_deliver(self, epoch, proposer, txs, linked, placeholder):
        if self._delivered_file is None:
            return
        digests = [hashlib.sha256(tx).hexdigest() for tx in txs]
        self._delivered_file.write(json.dumps(
            {"epoch": epoch, "proposer": proposer, "linked": linked,
             "placeholder": placeholder, "txs": digests}) + "\n")

    # ------------------------------------------------------ outbound links

    async def _writer(self, peer: int, link: int, queue: asyncio.Queue):
        host, port = _split_addr(self.config.peers[peer])
        backoff = BACKOFF_BASE_S
        while True:
            try:
                reader, writer = await asyncio.open_connection(host, port)
                sock = writer.get_extra_info("socket")
                if sock is not None:
                    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                await asyncio.wait_for(
                    _client_handshake(reader, writer, self.config.secret,
                                      self.config.node_id, link),
                    HANDSHAKE_TIMEOUT_S)
                backoff = BACKOFF_BASE_S
                while True:
                    data = await queue.get()
                    writer.write(data)
                    while not queue.empty():
                        writer.write(queue.get_nowait())
                    await writer.drain()
            except asyncio.CancelledError:
                raise
            except (OSError, asyncio.IncompleteReadError, ConnectionError,
                    asyncio.TimeoutError):
                jitter = 1.0 + os.urandom(1)[0] / 255.0
                await asyncio.sleep(backoff * jitter)
                backoff = min(backoff * 2.0, BACKOFF_CAP_S)

    # ------------------------------------------------------- inbound links

    async def _on_connection(self, reader, writer):
        task = asyncio.current_task()
        self._sessions.add(task)
        try:
            sender, link = await asyncio.wait_for(
                _server_handshake(reader, writer, self.config.secret),
                HANDSHAKE_TIMEOUT_S)
            if link in (LINK_DISPERSAL, LINK_RETRIEVAL):
                if sender in self.config.peers:
                    await self._peer_session(reader, sender)
            elif link == LINK_CLIENT:
                await self._client_session(reader, writer)
            elif link == LINK_ADMIN:
                await self._admin_session(reader, writer)
        except (HandshakeError, OSError, wire.WireError,
                asyncio.IncompleteReadError, asyncio.TimeoutError):
            pass
        finally:
            self._sessions.discard(task)
            writer.close()

    async def _peer_session(self, reader, sender: int):
        buffer = b""
        while True:
            data = await reader.read(65536)
            if not data:
                return
            buffer += data
            frames, buffer = wire.split_frames(buffer)
            for frame in frames:
                if frame.sender != sender:
                    continue
                payload = wire.decode_body(frame.msg_type, frame.body)
                if payload is None or frame.msg_type >= wire.T_TX_SUBMIT:
                    continue
                instance = InstanceId(frame.epoch, frame.proposer)
                self.inbox.put_nowait(("msg", instance, payload, sender))

    async def _client_session(self, reader, writer):
        buffer = b""
        loop = asyncio.get_running_loop()
        while True:
            data = await reader.read(65536)
            if not data:
                return
            buffer += data
            frames, buffer = wire.split_frames(buffer)
            for frame in frames:
                payload = wire.decode_body(frame.msg_type, frame.body)
                if type(payload) is not wire.TxSubmit:
                    continue
                reply = loop.create_future()
                self.inbox.put_nowait(("txs", list(payload.txs), reply))
                accepted, queue_len = await reply
                ack = wire.TxAck(accepted, queue_len)
                msg_type, body = wire.encode_body(ack)
                writer.write(wire.encode_frame(wire.WireFrame(
                    msg_type, 0, 0, self.config.node_id, body)))
                await writer.drain()

    async def _admin_session(self, reader, writer):
        while True:
            line = await reader.readline()
            if not line:
                return
            try:
                request = json.loads(line)
            except ValueError:
                request = {}
            if request.get("op") == "status":
                reply = self.status()
            else:
                reply = {"error": "unknown op"}
            writer.write(json.dumps(reply).encode() + b"\n")
            await writer.drain()

    def status(self) -> dict:
        core = self.core
        return {
            "node": self.config.node_id,
            "proposed_through": core.next_proposal_epoch - 1,
            "delivered_through": core.next_deliver - 1,
            "log_entries": len(core.log),
            "log_hash": core.log_hash().hex(),
            "retrieval_lag": core.retrieval_lag(),
            "delivered_payload_bytes": core.delivered_payload_bytes,
            "queue_len": len(core.tx_queue),
            "accepted_txs": self.accepted_txs,
            "proposals": len(core.proposal_times_us),
        }


def serve(config: NodeConfig):
    """Blocking entry point: run one node until cancelled."""
    asyncio.run(NodeProcess(config).run())


# ------------------------------------------------------------- client side

async def submit_txs(addr: str, secret: bytes, txs,
                     sender: int = CLIENT_ID) -> tuple[int, int]:
    """Submit a batch; returns (accepted count, node queue length). Raises
    ConnectionError / HandshakeError when the node is unreachable."""
    host, port = _split_addr(addr)
    reader, writer = await asyncio.open_connection(host, port)
    try:
        await asyncio.wait_for(
            _client_handshake(reader, writer, secret, sender, LINK_CLIENT),
            HANDSHAKE_TIMEOUT_S)
        accepted = 0
        queue_len = 0
        for at in range(0, len(txs), TXS_PER_FRAME):
            batch = tuple(txs[at:at + TXS_PER_FRAME])
            msg_type, body = wire.encode_body(wire.TxSubmit(batch))
            writer.write(wire.encode_frame(wire.WireFrame(
                msg_type, 0, 0, sender, body)))
            await writer.drain()
            buffer = b""
            while True:
                data = await reader.read(4096)
                if not data:
                    raise ConnectionError("node closed during submit")
                buffer += data
                frames, buffer = wire.split_frames(buffer)
                if frames:
                    ack = wire.decode_body(frames[0].msg_type, frames[0].body)
                    if type(ack) is wire.TxAck:
                        accepted += ack.accepted
                        queue_len = ack.queue_len
                    break
        return accepted, queue_len
    finally:
        writer.close()


async def node_status(addr: str, secret: bytes) -> dict:
    host, port = _split_addr(addr)
    reader, writer = await asyncio.open_connection(host, port)
    try:
        await asyncio.wait_for(
            _client_handshake(reader, writer, secret, CLIENT_ID, LINK_ADMIN),
            HANDSHAKE_TIMEOUT_S)
        writer.write(json.dumps({"op": "status"}).encode() + b"\n")
        await writer.drain()
        line = await reader.readline()
        if not line:
            raise ConnectionError("node closed during status query")
        return json.loads(line)
    finally:
        writer.close()
