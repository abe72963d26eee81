#!/usr/bin/env python3
"""Regenerate golden/codec_vectors.txt from the reference oracle.

Run from the repo root. Uses only tests/reference_rs.py plus an explicit
layer-by-layer Merkle walk here — the package codec is intentionally not
imported, so the committed vectors are independent of it.

File format (parsed by tests/test_codec.py):
  blank lines and '#' lines ignored; 'case <name>' opens a section;
  'key value' pairs within, values hex-encoded except n/f (decimal).
"""
import hashlib
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
import reference_rs as ref


def sha(x):
    return hashlib.sha256(x).digest()


def merkle_layers(shards):
    leaves = [sha(b"\x00" + s) for s in shards]
    while len(leaves) & (len(leaves) - 1):
        leaves.append(sha(b""))
    layers = [leaves]
    while len(layers[-1]) > 1:
        prev = layers[-1]
        layers.append([sha(b"\x01" + prev[i] + prev[i + 1]) for i in range(0, len(prev), 2)])
    return layers


def proof_for(layers, index):
    sibs = []
    i = index
    for layer in layers[:-1]:
        sibs.append(layer[i ^ 1])
        i >>= 1
    return sibs


def emit(out, name, block, n, f):
    k = n - 2 * f
    shards = ref.encode(block, n, k)
    layers = merkle_layers(shards)
    root = layers[-1][0]
    out.append(f"case {name}")
    out.append(f"n {n}")
    out.append(f"f {f}")
    out.append(f"block {block.hex()}")
    out.append(f"framed {ref.frame(block, k).hex()}")
    for i, s in enumerate(shards):
        out.append(f"shard{i} {s.hex()}")
    out.append(f"root {root.hex()}")
    for i in range(n):
        out.append(f"proof{i} {b''.join(proof_for(layers, i)).hex()}")
    out.append("")


def main():
    out = [
        "# Golden vectors for the erasure codec + Merkle commitment.",
        "# Generated by scripts/make_golden.py from the reference oracle;",
        "# do not edit by hand. Format: 'case <name>' then 'key hexvalue'.",
        "",
    ]
    emit(out, "abcdef-n4", b"ABCDEF", 4, 1)
    emit(out, "bytes257-n7", bytes(range(256)) + b"\xAA", 7, 2)
    emit(out, "single-byte-n4", b"\x00", 4, 1)
    path = Path(__file__).resolve().parent.parent / "golden" / "codec_vectors.txt"
    path.parent.mkdir(exist_ok=True)
    path.write_text("\n".join(out))
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
