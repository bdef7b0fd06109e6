"""Instance- and node-level embeddings from a checkpoint, plus two baselines.

Embedding store formats
-----------------------
CSV: header ``name,family,size,k,v0..v{k-1}``, one row per instance, values
written with ``repr`` so they read back exactly.

Binary table: magic ``b"FEMB"``, uint32 version, uint32 record count, then per
record a uint16-length-prefixed UTF-8 string for each of name, family and
size, a uint32 length k and k little-endian float64 values.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .bigraph import BipartiteGraph

_BIN_MAGIC = b"FEMB"
_BIN_VERSION = 1


@dataclass(frozen=True)
class InstanceEmbedding:
    vector: np.ndarray
    name: str = ""
    checkpoint_id: str = ""
    normalized: bool = True
    family: str = ""
    size: str = ""

    @property
    def k(self) -> int:
        return len(self.vector)


def code_histogram(codes: np.ndarray, k: int, normalized: bool = False) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= k):
        raise ValueError("code outside [0, k)")
    hist = np.bincount(codes, minlength=k).astype(np.float64)
    if normalized and codes.size:
        hist /= codes.size
    return hist


def node_embeddings(graph, checkpoint) -> tuple[np.ndarray, np.ndarray]:
    """Codes (N,) and their codewords (N x d)."""
    g = checkpoint.prepare(graph)
    codes = checkpoint.model.codes(g)
    return codes, checkpoint.model.codebook.weights.value[codes]


def instance_embedding(graph, checkpoint, normalized: bool = True) -> InstanceEmbedding:
    g = checkpoint.prepare(graph)
    codes, _ = node_embeddings(g, checkpoint)
    return InstanceEmbedding(code_histogram(codes, checkpoint.k, normalized), g.name,
                             checkpoint.checkpoint_id(), normalized)


def mean_readout(graph, checkpoint) -> np.ndarray:
    g = checkpoint.prepare(graph)
    return checkpoint.model.encode(g).mean(axis=0)


def label_propagation_embedding(graph: BipartiteGraph, hops: int = 2) -> np.ndarray:
    """Lazy propagation ``x_i <- mean over {i} ∪ N(i)``, then the node mean."""
    x = graph.node_features.copy()
    n = graph.n_nodes
    tgt = np.concatenate([graph.edge_con, graph.edge_var, np.arange(n)])
    src = np.concatenate([graph.edge_var, graph.edge_con, np.arange(n)])
    counts = np.bincount(tgt, minlength=n).astype(np.float64)
    for _ in range(hops):
        acc = np.zeros_like(x)
        np.add.at(acc, tgt, x[src])
        x = acc / counts[:, None]
    return x.mean(axis=0)


# ---------------------------------------------------------------------------
# embedding store
# ---------------------------------------------------------------------------

def write_store_csv(embeddings: list[InstanceEmbedding], path) -> None:
    k = embeddings[0].k if embeddings else 0
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["name", "family", "size", "k"] + [f"v{i}" for i in range(k)])
        for e in embeddings:
            if e.k != k:
                raise ValueError("all embeddings in a store must share k")
            wr.writerow([e.name, e.family, e.size, e.k] + [repr(float(v)) for v in e.vector])


def read_store_csv(path) -> list[InstanceEmbedding]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            k = int(row[3])
            vec = np.array([float(v) for v in row[4: 4 + k]])
            out.append(InstanceEmbedding(vec, row[0], family=row[1], size=row[2]))
    return out


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def write_store_binary(embeddings: list[InstanceEmbedding], path) -> None:
    parts = [_BIN_MAGIC, struct.pack("<II", _BIN_VERSION, len(embeddings))]
    for e in embeddings:
        parts += [_pack_str(e.name), _pack_str(e.family), _pack_str(e.size),
                  struct.pack("<I", e.k), np.asarray(e.vector, dtype="<f8").tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_store_binary(path) -> list[InstanceEmbedding]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != _BIN_MAGIC:
        raise ValueError(f"{path}: not an embedding table")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _BIN_VERSION:
        raise ValueError(f"{path}: unsupported embedding table version {version}")
    pos = 12
    out = []

    def take_str():
        nonlocal pos
        (ln,) = struct.unpack_from("<H", data, pos)
        s = data[pos + 2: pos + 2 + ln].decode("utf-8")
        pos += 2 + ln
        return s

    try:
        for _ in range(count):
            name, fam, size = take_str(), take_str(), take_str()
            (k,) = struct.unpack_from("<I", data, pos)
            pos += 4
            vec = np.frombuffer(data, dtype="<f8", count=k, offset=pos).copy()
            pos += 8 * k
            out.append(InstanceEmbedding(vec, name, family=fam, size=size))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: truncated or corrupt embedding table ({exc})") from None
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after {count} records")
    return out
