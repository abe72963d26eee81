"""Erasure codec and Merkle commitments for block dispersal.

A block is framed (4-byte big-endian length + payload + zero padding to a
multiple of k), split into k = n - 2f data shards, and extended to n shards
with the systematic Reed-Solomon code from gf256. Commitments are Merkle
roots over the shard array:

  leaf  = SHA256(0x00 || shard)
  inner = SHA256(0x01 || left || right)
  leaf-hash list padded to the next power of two with SHA256(b"")

Every convention here is normative: retrievers re-encode the decoded block
and compare roots, so all parties must produce bit-identical bytes.

All functions are pure; nothing here holds mutable state.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import gf256

DEFAULT_MAX_BLOCK = 8 * 1024 * 1024
HASH_LEN = 32

_EMPTY_LEAF = hashlib.sha256(b"").digest()


class CodecError(Exception):
    """Base for all codec failures (callers map these to BAD_UPLOADER)."""


class FramingError(CodecError):
    """Length prefix inconsistent with the framed byte count."""


class BlockTooLarge(CodecError):
    pass


@dataclass(frozen=True)
class Params:
    """Cluster sizing. k = n - 2f data shards; tolerate up to f Byzantine."""

    n: int
    f: int
    lam: int = HASH_LEN
    max_block_bytes: int = DEFAULT_MAX_BLOCK

    def __post_init__(self):
        if not (self.f >= 1 and self.n >= 3 * self.f + 1 and self.n >= 4):
            raise ValueError(f"need n >= 3f+1, n >= 4, f >= 1; got n={self.n} f={self.f}")
        if self.n > 255:
            raise ValueError("GF(2^8) codec supports at most 255 shards")
        if self.lam != HASH_LEN:
            raise ValueError("hash size is fixed at 32 bytes")

    @property
    def k(self) -> int:
        return self.n - 2 * self.f

    @property
    def quorum(self) -> int:
        return self.n - self.f


@dataclass(frozen=True)
class ShardSet:
    shards: tuple[bytes, ...]

    @property
    def shard_len(self) -> int:
        return len(self.shards[0])


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    siblings: tuple[bytes, ...]


# --- framing ---

def frame(block: bytes, k: int) -> bytes:
    framed = len(block).to_bytes(4, "big") + block
    if len(framed) % k:
        framed += b"\x00" * (k - len(framed) % k)
    return framed


def unframe(framed: bytes) -> bytes:
    if len(framed) < 4:
        raise FramingError("framed block shorter than the length prefix")
    length = int.from_bytes(framed[:4], "big")
    if length > len(framed) - 4:
        raise FramingError(f"length prefix {length} exceeds framed size {len(framed)}")
    return framed[4:4 + length]


# --- erasure code ---

def encode(block: bytes, params: Params) -> ShardSet:
    """Split a block into n shards; shards 0..k-1 are the framed data."""
    if not block:
        raise CodecError("refusing to encode an empty block")
    if len(block) > params.max_block_bytes:
        raise BlockTooLarge(f"block of {len(block)} bytes exceeds {params.max_block_bytes}")
    k = params.k
    framed = frame(block, k)
    shard_len = len(framed) // k
    data = np.frombuffer(framed, dtype=np.uint8).reshape(k, shard_len)
    emat = gf256.encode_matrix(params.n, k)
    parity = gf256.mat_apply(list(emat[k:]), data)
    shards = tuple(framed[i * shard_len:(i + 1) * shard_len] for i in range(k)) + tuple(
        parity[i].tobytes() for i in range(params.n - k)
    )
    return ShardSet(shards=shards)


def decode(shards: Mapping[int, bytes], params: Params) -> bytes:
    """Recover the unframed block from any k indexed shards."""
    k = params.k
    if len(shards) < k:
        raise CodecError(f"need {k} shards, got {len(shards)}")
    indices = tuple(sorted(shards)[:k])
    if indices[-1] >= params.n or indices[0] < 0:
        raise CodecError("shard index out of range")
    lengths = {len(shards[i]) for i in indices}
    if len(lengths) != 1:
        raise CodecError(f"inconsistent shard lengths {sorted(lengths)}")
    if indices == tuple(range(k)):
        framed = b"".join(shards[i] for i in indices)
        return unframe(framed)
    rows = np.stack([np.frombuffer(shards[i], dtype=np.uint8) for i in indices])
    undo = gf256.decode_matrix(params.n, k, indices)
    data = gf256.mat_apply(list(undo), rows)
    return unframe(data.tobytes())


# --- merkle commitments ---

def _sha(x: bytes) -> bytes:
    return hashlib.sha256(x).digest()


def _leaf_hashes(shards: Sequence[bytes]) -> list[bytes]:
    hashes = [_sha(b"\x00" + s) for s in shards]
    while len(hashes) & (len(hashes) - 1):
        hashes.append(_EMPTY_LEAF)
    return hashes


def merkle_root(shards: ShardSet | Sequence[bytes]) -> bytes:
    level = _leaf_hashes(shards.shards if isinstance(shards, ShardSet) else shards)
    while len(level) > 1:
        level = [_sha(b"\x01" + level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def merkle_prove(shards: ShardSet | Sequence[bytes], index: int) -> MerkleProof:
    leaves = shards.shards if isinstance(shards, ShardSet) else shards
    if not 0 <= index < len(leaves):
        raise IndexError(f"leaf index {index} out of range")
    level = _leaf_hashes(leaves)
    siblings = []
    pos = index
    while len(level) > 1:
        siblings.append(level[pos ^ 1])
        level = [_sha(b"\x01" + level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        pos >>= 1
    return MerkleProof(leaf_index=index, siblings=tuple(siblings))


def merkle_verify(root: bytes, index: int, leaf_data: bytes, proof: MerkleProof) -> bool:
    if index != proof.leaf_index or index < 0:
        return False
    if index >> len(proof.siblings):
        return False  # index does not fit in the tree the proof describes
    acc = _sha(b"\x00" + leaf_data)
    pos = index
    for sib in proof.siblings:
        if len(sib) != HASH_LEN:
            return False
        acc = _sha(b"\x01" + sib + acc) if pos & 1 else _sha(b"\x01" + acc + sib)
        pos >>= 1
    return acc == root
