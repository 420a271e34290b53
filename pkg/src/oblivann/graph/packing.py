"""Fixed-size on-disk node layout.

Traversal block (node id = block id)::

    degree u16 LE | R_g x u32 LE neighbor ids (pad 0xFFFFFFFF) | pruning-hint code (m bytes) | zero pad

A degree of 0xFFFF marks a deleted node. Refinement block: the full vector as float32 LE.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..pq import PqCodebook
from .vamana import GraphIndex

PAD_ID = 0xFFFF_FFFF
TOMBSTONE_DEGREE = 0xFFFF
HEADER_VERSION = 1


class PackingError(ValueError):
    pass


def adjacency_bytes(max_degree: int) -> int:
    return 2 + 4 * max_degree


def encode_traversal(nbrs, code: bytes, max_degree: int, block_size: int, tombstone: bool = False) -> bytes:
    nbrs = list(nbrs)
    if len(nbrs) > max_degree:
        raise PackingError(f"{len(nbrs)} neighbors exceed max degree {max_degree}")
    need = adjacency_bytes(max_degree) + len(code)
    if need > block_size:
        raise PackingError(f"adjacency + hint need {need} bytes, block is {block_size}")
    ids = np.full(max_degree, PAD_ID, dtype="<u4")
    ids[:len(nbrs)] = nbrs
    deg = TOMBSTONE_DEGREE if tombstone else len(nbrs)
    raw = np.array([deg], dtype="<u2").tobytes() + ids.tobytes() + bytes(code)
    return raw + bytes(block_size - len(raw))


def decode_traversal(block: bytes, max_degree: int, hint_bytes: int) -> tuple[np.ndarray, bytes, bool]:
    """(neighbor ids, hint code, tombstone flag)."""
    deg = int(np.frombuffer(block, dtype="<u2", count=1)[0])
    ids = np.frombuffer(block, dtype="<u4", count=max_degree, offset=2)
    off = adjacency_bytes(max_degree)
    code = bytes(block[off:off + hint_bytes])
    if deg == TOMBSTONE_DEGREE:
        live = ids[ids != PAD_ID]
        return live.astype(np.int64), code, True
    if deg > max_degree:
        raise PackingError(f"corrupt degree {deg}")
    return ids[:deg].astype(np.int64), code, False


def encode_refinement(vec) -> bytes:
    return np.asarray(vec, dtype="<f4").tobytes()


def decode_refinement(block: bytes) -> np.ndarray:
    return np.frombuffer(block, dtype="<f4").astype(np.float32)


@dataclass
class PackedIndex:
    traversal: np.ndarray          # (n, traversal_block_size) uint8
    refinement: np.ndarray         # (n, refinement_block_size) uint8
    max_degree: int
    hint_bytes: int
    dims: int
    start: int
    seed: int = 0

    @property
    def n(self) -> int:
        return self.traversal.shape[0]

    @property
    def traversal_block_size(self) -> int:
        return self.traversal.shape[1]

    @property
    def refinement_block_size(self) -> int:
        return self.refinement.shape[1]

    def traversal_block(self, p: int) -> bytes:
        return self.traversal[p].tobytes()

    def refinement_block(self, p: int) -> bytes:
        return self.refinement[p].tobytes()

    def unpack_node(self, p: int):
        return decode_traversal(self.traversal_block(p), self.max_degree, self.hint_bytes)

    def vectors(self) -> np.ndarray:
        return np.frombuffer(self.refinement.tobytes(), dtype="<f4").reshape(self.n, self.dims).astype(np.float32)

    def hint_codes(self) -> np.ndarray:
        off = adjacency_bytes(self.max_degree)
        return self.traversal[:, off:off + self.hint_bytes].copy()

    def header(self) -> dict:
        return {"version": HEADER_VERSION, "n": self.n, "traversal_block_size": self.traversal_block_size,
                "refinement_block_size": self.refinement_block_size, "max_degree": self.max_degree,
                "hint_bytes": self.hint_bytes, "dims": self.dims, "start": self.start, "seed": self.seed}

    def save(self, prefix: str | os.PathLike) -> None:
        prefix = os.fspath(prefix)
        with open(prefix + ".header.json", "w") as fh:
            json.dump(self.header(), fh, indent=1, sort_keys=True)
        self.traversal.tofile(prefix + ".traversal")
        self.refinement.tofile(prefix + ".refinement")

    @classmethod
    def load(cls, prefix: str | os.PathLike) -> "PackedIndex":
        prefix = os.fspath(prefix)
        with open(prefix + ".header.json") as fh:
            h = json.load(fh)
        if h.get("version") != HEADER_VERSION:
            raise PackingError(f"unsupported packed-index version {h.get('version')}")
        n = h["n"]
        trav = np.fromfile(prefix + ".traversal", dtype=np.uint8).reshape(n, h["traversal_block_size"])
        ref = np.fromfile(prefix + ".refinement", dtype=np.uint8).reshape(n, h["refinement_block_size"])
        return cls(trav, ref, h["max_degree"], h["hint_bytes"], h["dims"], h["start"], h.get("seed", 0))


def pack(graph: GraphIndex, pruning_codebook: Optional[PqCodebook], block_size: Optional[int] = None,
         codes: Optional[np.ndarray] = None) -> PackedIndex:
    """Emit traversal blocks (adjacency || H_p) and refinement blocks (full vectors).

    Node ids must be dense ``0..n-1``. ``block_size`` defaults to the exact encoded size.
    A ``None`` codebook means zero-byte pruning hints.
    """
    n = int(graph.present.nonzero()[0].max()) + 1 if graph.present.any() else 0
    if n == 0:
        raise PackingError("empty graph")
    if not graph.present[:n].all():
        raise PackingError("node ids must be dense to pack")
    X = graph.vectors[:n]
    if pruning_codebook is None:
        hint_bytes = 0
        codes = np.zeros((n, 0), dtype=np.uint8)
    else:
        if pruning_codebook.dims != graph.dims:
            raise PackingError("codebook dimensionality differs from the graph")
        hint_bytes = pruning_codebook.code_bytes
        if codes is None:
            codes = pruning_codebook.encode(X)
    R = graph.params.max_degree
    exact = adjacency_bytes(R) + hint_bytes
    tbs = exact if block_size is None else int(block_size)
    if exact > tbs:
        raise PackingError(f"adjacency + hint need {exact} bytes, block is {tbs}")
    trav = np.zeros((n, tbs), dtype=np.uint8)
    trav[:, 0:2] = np.frombuffer(graph.deg[:n].astype("<u2").tobytes(), dtype=np.uint8).reshape(n, 2)
    ids = np.where(np.arange(R)[None, :] < graph.deg[:n, None], graph.adj[:n].astype(np.int64), PAD_ID)
    trav[:, 2:2 + 4 * R] = np.frombuffer(ids.astype("<u4").tobytes(), dtype=np.uint8).reshape(n, 4 * R)
    trav[:, 2 + 4 * R:exact] = codes
    if graph.deleted[:n].any():
        dead = np.nonzero(graph.deleted[:n])[0]
        trav[dead, 0:2] = np.frombuffer(np.array([TOMBSTONE_DEGREE], dtype="<u2").tobytes(), dtype=np.uint8)
    ref = np.frombuffer(np.ascontiguousarray(X, dtype="<f4").tobytes(), dtype=np.uint8).reshape(n, 4 * graph.dims)
    return PackedIndex(trav, ref.copy(), R, hint_bytes, graph.dims, graph.start, graph.params.seed)


def unpack(packed: PackedIndex) -> tuple[list[np.ndarray], np.ndarray]:
    """(adjacency lists, hint codes) as stored."""
    adj = [packed.unpack_node(p)[0] for p in range(packed.n)]
    return adj, packed.hint_codes()
