"""Canonical byte encoding for protocol messages, blocks, and frames.

Frame layout (all integers big-endian):

    length:4 | version:1 = 0x01 | msg_type:1 | epoch:8 | proposer:2 |
    sender:2 | body

``length`` covers everything after itself (14 + len(body)). Unknown
msg_type values parse structurally and are skipped by consumers, so the
enum can grow without breaking old peers. Body sizes (not frame sizes)
are what the bandwidth accounting in the benchmarks measures.

Malformed input never raises out of the parse helpers: frame splitting
raises WireError only on unrecoverable garbage (bad version / absurd
length), and body decoding returns None so the caller can drop the
message and move on.
"""
from __future__ import annotations

import struct
from typing import NamedTuple, Optional

from .codec import MerkleProof
from .ba import Aux, Bval, Decided
from .vid import Chunk, GotChunk, Ready, RequestChunk, ReturnChunk

VERSION = 1
HEADER_LEN = 14          # bytes covered by `length` before the body
MAX_FRAME = 64 * 1024 * 1024
INF = 2**64 - 1          # v-array entry for "completed everything observed"

T_CHUNK = 0x01
T_GOT_CHUNK = 0x02
T_READY = 0x03
T_REQUEST_CHUNK = 0x04
T_RETURN_CHUNK = 0x05
T_BVAL = 0x10
T_AUX = 0x11
T_DECIDED = 0x12
T_TX_SUBMIT = 0x20
T_TX_ACK = 0x21

_HEADER = struct.Struct(">BBQHH")


class WireError(ValueError):
    pass


class TxSubmit(NamedTuple):
    txs: tuple[bytes, ...]


class TxAck(NamedTuple):
    accepted: int
    queue_len: int


class WireFrame(NamedTuple):
    msg_type: int
    epoch: int
    proposer: int
    sender: int
    body: bytes


def encode_frame(frame: WireFrame) -> bytes:
    header = _HEADER.pack(VERSION, frame.msg_type, frame.epoch,
                          frame.proposer, frame.sender)
    return struct.pack(">I", HEADER_LEN + len(frame.body)) + header + frame.body


def split_frames(buffer: bytes) -> tuple[list[WireFrame], bytes]:
    """Split as many whole frames as the buffer holds; returns (frames, rest)."""
    frames = []
    offset = 0
    n = len(buffer)
    while n - offset >= 4:
        (length,) = struct.unpack_from(">I", buffer, offset)
        if length < HEADER_LEN or length > MAX_FRAME:
            raise WireError(f"bad frame length {length}")
        if n - offset - 4 < length:
            break
        version, msg_type, epoch, proposer, sender = _HEADER.unpack_from(
            buffer, offset + 4)
        if version != VERSION:
            raise WireError(f"unsupported version {version}")
        body = bytes(buffer[offset + 4 + HEADER_LEN:offset + 4 + length])
        frames.append(WireFrame(msg_type, epoch, proposer, sender, body))
        offset += 4 + length
    return frames, bytes(buffer[offset:])


# -- payload bodies ---------------------------------------------------------

def _pack_proof(proof: MerkleProof) -> bytes:
    return (struct.pack(">HB", proof.leaf_index, len(proof.siblings))
            + b"".join(proof.siblings))


def _unpack_proof(body: bytes, at: int):
    if len(body) < at + 3:
        return None
    index, count = struct.unpack_from(">HB", body, at)
    at += 3
    if len(body) < at + 32 * count:
        return None
    siblings = tuple(body[at + 32 * i:at + 32 * (i + 1)] for i in range(count))
    return MerkleProof(index, siblings), at + 32 * count


def _pack_chunkish(root: bytes, chunk: bytes, proof: MerkleProof) -> bytes:
    return root + _pack_proof(proof) + struct.pack(">I", len(chunk)) + chunk


def _unpack_chunkish(body: bytes):
    if len(body) < 32:
        return None
    root = body[:32]
    got = _unpack_proof(body, 32)
    if got is None:
        return None
    proof, at = got
    if len(body) < at + 4:
        return None
    (clen,) = struct.unpack_from(">I", body, at)
    at += 4
    if len(body) != at + clen:
        return None
    return root, body[at:], proof


def encode_body(payload) -> tuple[int, bytes]:
    """(msg_type, body bytes) for any protocol payload object."""
    t = type(payload)
    if t is Chunk:
        return T_CHUNK, _pack_chunkish(payload.root, payload.chunk, payload.proof)
    if t is GotChunk:
        return T_GOT_CHUNK, payload.root
    if t is Ready:
        return T_READY, payload.root
    if t is RequestChunk:
        return T_REQUEST_CHUNK, b""
    if t is ReturnChunk:
        return T_RETURN_CHUNK, _pack_chunkish(payload.root, payload.chunk, payload.proof)
    if t is Bval:
        return T_BVAL, struct.pack(">IB", payload.round, payload.bit & 1)
    if t is Aux:
        return T_AUX, struct.pack(">IB", payload.round, payload.bit & 1)
    if t is Decided:
        return T_DECIDED, struct.pack(">B", payload.bit & 1)
    if t is TxSubmit:
        parts = [struct.pack(">I", len(payload.txs))]
        parts += [struct.pack(">I", len(tx)) + tx for tx in payload.txs]
        return T_TX_SUBMIT, b"".join(parts)
    if t is TxAck:
        return T_TX_ACK, struct.pack(">IQ", payload.accepted, payload.queue_len)
    raise WireError(f"unencodable payload {t.__name__}")


def decode_body(msg_type: int, body: bytes):
    """Payload object, or None when the body is malformed for its type.
    Unknown msg_type also yields None (callers skip the frame)."""
    if msg_type == T_CHUNK or msg_type == T_RETURN_CHUNK:
        got = _unpack_chunkish(body)
        if got is None:
            return None
        cls = Chunk if msg_type == T_CHUNK else ReturnChunk
        return cls(got[0], got[1], got[2])
    if msg_type == T_GOT_CHUNK or msg_type == T_READY:
        if len(body) != 32:
            return None
        return (GotChunk if msg_type == T_GOT_CHUNK else Ready)(body)
    if msg_type == T_REQUEST_CHUNK:
        return RequestChunk() if body == b"" else None
    if msg_type == T_BVAL or msg_type == T_AUX:
        if len(body) != 5:
            return None
        rnd, bit = struct.unpack(">IB", body)
        if bit > 1:
            return None
        return (Bval if msg_type == T_BVAL else Aux)(rnd, bit)
    if msg_type == T_DECIDED:
        if len(body) != 1 or body[0] > 1:
            return None
        return Decided(body[0])
    if msg_type == T_TX_SUBMIT:
        if len(body) < 4:
            return None
        (count,) = struct.unpack_from(">I", body, 0)
        at = 4
        txs = []
        for _ in range(count):
            if len(body) < at + 4:
                return None
            (tlen,) = struct.unpack_from(">I", body, at)
            at += 4
            if len(body) < at + tlen:
                return None
            txs.append(body[at:at + tlen])
            at += tlen
        if at != len(body):
            return None
        return TxSubmit(tuple(txs))
    if msg_type == T_TX_ACK:
        if len(body) != 12:
            return None
        return TxAck(*struct.unpack(">IQ", body))
    return None


def body_size(payload) -> int:
    """len(encode_body(payload)[1]) without building the bytes; used on the
    simulator hot path for bandwidth accounting."""
    t = type(payload)
    if t is Chunk or t is ReturnChunk:
        return 32 + 3 + 32 * len(payload.proof.siblings) + 4 + len(payload.chunk)
    if t is GotChunk or t is Ready:
        return 32
    if t is RequestChunk:
        return 0
    if t is Bval or t is Aux:
        return 5
    if t is Decided:
        return 1
    if t is TxSubmit:
        return 4 + sum(4 + len(tx) for tx in payload.txs)
    if t is TxAck:
        return 12
    raise WireError(f"unencodable payload {type(payload).__name__}")


# -- block bytes ------------------------------------------------------------

def encode_block(v_array: tuple[int, ...], txs) -> bytes:
    """Canonical block bytes: n | v-array entries | tx count | txs."""
    parts = [struct.pack(">H", len(v_array))]
    parts += [struct.pack(">Q", v) for v in v_array]
    parts.append(struct.pack(">I", len(txs)))
    parts += [struct.pack(">I", len(tx)) + tx for tx in txs]
    return b"".join(parts)


def decode_varray(data: bytes, expect_n: Optional[int] = None):
    """Parse only the leading v-array; tolerates a corrupt transaction
    section (observation extraction is per-field)."""
    if len(data) < 2:
        return None
    (n,) = struct.unpack_from(">H", data, 0)
    if expect_n is not None and n != expect_n:
        return None
    if len(data) < 2 + 8 * n:
        return None
    return struct.unpack_from(f">{n}Q", data, 2)


def decode_block(data: bytes, expect_n: Optional[int] = None):
    """(v_array, txs) or None if malformed / wrong node count."""
    if len(data) < 2:
        return None
    (n,) = struct.unpack_from(">H", data, 0)
    if expect_n is not None and n != expect_n:
        return None
    at = 2
    if len(data) < at + 8 * n + 4:
        return None
    v_array = struct.unpack_from(f">{n}Q", data, at)
    at += 8 * n
    (count,) = struct.unpack_from(">I", data, at)
    at += 4
    txs = []
    for _ in range(count):
        if len(data) < at + 4:
            return None
        (tlen,) = struct.unpack_from(">I", data, at)
        at += 4
        if len(data) < at + tlen:
            return None
        txs.append(data[at:at + tlen])
        at += tlen
    if at != len(data):
        return None
    return v_array, txs


def block_size(v_array_len: int, txs) -> int:
    return 2 + 8 * v_array_len + 4 + sum(4 + len(tx) for tx in txs)
