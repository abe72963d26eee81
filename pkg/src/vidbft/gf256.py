"""GF(2^8) arithmetic and the systematic Reed-Solomon encode matrix.

Table-driven: log/exp tables for scalar work, a 256x256 product table for
bulk shard math through numpy fancy indexing. Conventions (normative for
this artifact, shared with the golden-vector oracle):

  reducing polynomial 0x11D, generator element 0x02,
  evaluation points x_i = 0x02^i,
  V[i][j] = x_i^j (n rows, k cols), encode matrix E = V @ inv(V[:k]).

Rows 0..k-1 of E are the identity, so data shards are the framed block
verbatim and any k rows of E are invertible (Vandermonde minors).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

POLY = 0x11D

EXP = [0] * 512
LOG = [0] * 256
_x = 1
for _i in range(255):
    EXP[_i] = _x
    LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= POLY
for _i in range(255, 512):
    EXP[_i] = EXP[_i - 255]

# MUL[a][b] = a*b over the field; rows double as multiply-by-a lookup tables.
MUL = np.zeros((256, 256), dtype=np.uint8)
for _a in range(1, 256):
    _la = LOG[_a]
    MUL[_a][1:] = np.array([EXP[_la + LOG[_b]] for _b in range(1, 256)], dtype=np.uint8)


def mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return EXP[LOG[a] + LOG[b]]


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(2^8)")
    return EXP[255 - LOG[a]]


def mat_inv(rows: list[list[int]]) -> list[list[int]]:
    """Gauss-Jordan over the field; rows is a square list-of-lists."""
    size = len(rows)
    aug = [list(r) + [int(i == j) for j in range(size)] for i, r in enumerate(rows)]
    for col in range(size):
        pivot = next((r for r in range(col, size) if aug[r][col]), None)
        if pivot is None:
            raise ValueError("singular matrix")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        scale = inv(aug[col][col])
        aug[col] = [mul(scale, v) for v in aug[col]]
        prow = aug[col]
        for r in range(size):
            if r != col and aug[r][col]:
                factor = aug[r][col]
                aug[r] = [v ^ mul(factor, p) for v, p in zip(aug[r], prow)]
    return [r[size:] for r in aug]


@lru_cache(maxsize=64)
def encode_matrix(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    vand = [[EXP[(i * j) % 255] for j in range(k)] for i in range(n)]
    top_inv = mat_inv(vand[:k])
    emat = []
    for i in range(n):
        row = [0] * k
        for t in range(k):
            coeff = vand[i][t]
            if coeff:
                for j in range(k):
                    row[j] ^= mul(coeff, top_inv[t][j])
        emat.append(tuple(row))
    return tuple(emat)


def mat_apply(rows: list[tuple[int, ...]] | list[list[int]], data: np.ndarray) -> np.ndarray:
    """Multiply a coefficient matrix (r x k) by a uint8 data matrix (k x L)."""
    length = data.shape[1]
    out = np.zeros((len(rows), length), dtype=np.uint8)
    for i, row in enumerate(rows):
        acc = out[i]
        for j, coeff in enumerate(row):
            if coeff == 1:
                np.bitwise_xor(acc, data[j], out=acc)
            elif coeff:
                np.bitwise_xor(acc, MUL[coeff][data[j]], out=acc)
    return out


@lru_cache(maxsize=512)
def decode_matrix(n: int, k: int, indices: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    """Inverse of the k encode-matrix rows picked out by `indices`."""
    emat = encode_matrix(n, k)
    sub = [list(emat[i]) for i in indices]
    return tuple(tuple(r) for r in mat_inv(sub))
