"""Verifiable information dispersal: per-instance server and retriever
state machines.

Dispersal: the proposer Merkle-commits the shard array and sends every
server its chunk + proof. Servers acknowledge with GotChunk(root), emit
Ready(root) at n-f acknowledgements (or at f+1 Readys, the amplification
path), and Complete at 2f+1 Readys. Retrieval: a client asks every server,
collects k = n-2f proof-valid chunks under one root, decodes, re-encodes,
and accepts only if the recomputed root matches — otherwise the result is
the literal BAD_UPLOADER marker, identically at every correct client.

State machines are single-threaded and deterministic; drivers deliver one
message at a time and fan out whatever comes back. Broadcasts include the
local node (drivers self-deliver).
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Optional

from . import codec
from .codec import MerkleProof, Params

BAD_UPLOADER = b"BAD_UPLOADER"


class InstanceId(NamedTuple):
    epoch: int
    proposer: int


class Chunk(NamedTuple):
    root: bytes
    chunk: bytes
    proof: MerkleProof


class GotChunk(NamedTuple):
    root: bytes


class Ready(NamedTuple):
    root: bytes


class RequestChunk(NamedTuple):
    pass


class ReturnChunk(NamedTuple):
    root: bytes
    chunk: bytes
    proof: MerkleProof


class Cancel(NamedTuple):
    """Retriever is done; simulator uses this to drop queued ReturnChunks."""


VerifyFn = Callable[[bytes, int, bytes, MerkleProof], bool]


def disperse(block: bytes, params: Params, instance: InstanceId):
    """Proposer side: returns (root, [(dest, Chunk)]) covering every server."""
    shards = codec.encode(block, params)
    root = codec.merkle_root(shards)
    out = [
        (i, Chunk(root, shards.shards[i], codec.merkle_prove(shards, i)))
        for i in range(params.n)
    ]
    return root, out


class VidServer:
    """One server's view of one dispersal instance."""

    __slots__ = (
        "params", "instance", "node_id", "my_chunk", "my_proof", "my_root",
        "share_count", "ready_count", "got_seen", "ready_seen",
        "sent_got_chunk", "sent_ready", "sent_ready_root", "chunk_root",
        "completed", "pending_requests", "cancelled", "verify",
    )

    def __init__(self, params: Params, instance: InstanceId, node_id: int,
                 verify: VerifyFn = codec.merkle_verify):
        self.params = params
        self.instance = instance
        self.node_id = node_id
        self.my_chunk: Optional[bytes] = None
        self.my_proof: Optional[MerkleProof] = None
        self.my_root: Optional[bytes] = None
        self.share_count: dict[bytes, int] = {}
        self.ready_count: dict[bytes, int] = {}
        self.got_seen: set[int] = set()
        self.ready_seen: set[int] = set()
        self.sent_got_chunk = False
        self.sent_ready = False
        self.sent_ready_root: Optional[bytes] = None
        self.chunk_root: Optional[bytes] = None
        self.completed = False
        self.pending_requests: set[int] = set()
        self.cancelled: set[int] = set()
        self.verify = verify

    # Each handler returns (broadcasts, directs) where directs is a list of
    # (destination, payload). Completion is visible via .completed flipping.

    def handle(self, payload, sender: int):
        if type(payload) is Chunk:
            return self.on_chunk(payload, sender)
        if type(payload) is GotChunk:
            return self.on_got_chunk(payload.root, sender), []
        if type(payload) is Ready:
            return self.on_ready(payload.root, sender)
        if type(payload) is RequestChunk:
            return [], self.on_request(sender)
        if type(payload) is Cancel:
            self.cancelled.add(sender)
            self.pending_requests.discard(sender)
            return [], []
        return [], []

    def on_chunk(self, msg: Chunk, sender: int):
        # Only the proposer may supply chunks; first valid one wins.
        if sender != self.instance.proposer or self.my_chunk is not None:
            return [], []
        if not self.verify(msg.root, self.node_id, msg.chunk, msg.proof):
            return [], []
        self.my_chunk, self.my_proof, self.my_root = msg.chunk, msg.proof, msg.root
        out = []
        if not self.sent_got_chunk:
            self.sent_got_chunk = True
            out.append(GotChunk(msg.root))
        return out, self._flush_pending()

    def on_got_chunk(self, root: bytes, sender: int):
        if sender in self.got_seen:
            return []
        self.got_seen.add(sender)
        count = self.share_count.get(root, 0) + 1
        self.share_count[root] = count
        if count >= self.params.quorum and not self.sent_ready:
            return self._emit_ready(root)
        return []

    def on_ready(self, root: bytes, sender: int):
        if sender in self.ready_seen:
            return [], []
        self.ready_seen.add(sender)
        count = self.ready_count.get(root, 0) + 1
        self.ready_count[root] = count
        out = []
        directs = []
        if count >= self.params.f + 1 and not self.sent_ready:
            out = self._emit_ready(root)
        if count >= 2 * self.params.f + 1 and not self.completed:
            self.chunk_root = root
            self.completed = True
            directs = self._flush_pending()
        return out, directs

    def _emit_ready(self, root: bytes):
        self.sent_ready = True
        self.sent_ready_root = root
        return [Ready(root)]

    def on_request(self, requester: int):
        if requester in self.cancelled or requester in self.pending_requests:
            return []
        if self._can_serve():
            return [(requester, ReturnChunk(self.chunk_root, self.my_chunk, self.my_proof))]
        self.pending_requests.add(requester)
        return []

    def _can_serve(self) -> bool:
        return self.completed and self.my_root == self.chunk_root and self.my_chunk is not None

    def _flush_pending(self):
        if not self._can_serve() or not self.pending_requests:
            return []
        reply = ReturnChunk(self.chunk_root, self.my_chunk, self.my_proof)
        out = [(r, reply) for r in sorted(self.pending_requests)]
        self.pending_requests.clear()
        return out


class VidRetriever:
    """One client's retrieval of one instance."""

    __slots__ = ("params", "instance", "collected", "result", "verify", "decode_check")

    def __init__(self, params: Params, instance: InstanceId,
                 verify: VerifyFn = codec.merkle_verify,
                 decode_check=None):
        self.params = params
        self.instance = instance
        self.collected: dict[bytes, dict[int, bytes]] = {}
        self.result: Optional[bytes] = None
        self.verify = verify
        # decode_check(root, {index: chunk}, params) -> block | BAD_UPLOADER;
        # injectable so the simulator can memoize the benign path.
        self.decode_check = decode_check or decode_and_check

    def start(self):
        return [RequestChunk()]  # driver broadcasts to all servers

    def on_return(self, msg: ReturnChunk, sender: int) -> Optional[bytes]:
        """Returns the final result the first time it is determined."""
        if self.result is not None:
            return None
        if not (0 <= sender < self.params.n):
            return None
        by_sender = self.collected.setdefault(msg.root, {})
        if sender in by_sender:
            return None
        if not self.verify(msg.root, sender, msg.chunk, msg.proof):
            return None
        by_sender[sender] = msg.chunk
        if len(by_sender) >= self.params.k:
            take = {i: by_sender[i] for i in sorted(by_sender)[:self.params.k]}
            self.result = self.decode_check(msg.root, take, self.params)
            return self.result
        return None


def decode_and_check(root: bytes, chunks: dict[int, bytes], params: Params) -> bytes:
    """Decode k chunks and apply the re-encode consistency check."""
    try:
        block = codec.decode(chunks, params)
        if not block:
            return BAD_UPLOADER  # empty payload cannot round-trip through encode
        reencoded = codec.encode(block, params)
    except codec.CodecError:
        return BAD_UPLOADER
    if codec.merkle_root(reencoded) != root:
        return BAD_UPLOADER
    return block
