"""Logical block devices used by the engine: ORAM-backed or pass-through.

Both expose the same single-access operations and keep a logical trace of
(device, block size) entries, which is what the access-count obliviousness
checks compare.
"""
from __future__ import annotations

from typing import Callable, Optional

from ..oram import MODIFY, READ, WRITE, TreeOram


class BlockDevice:
    name: str
    block_size: int
    capacity: int

    def __init__(self):
        self.accesses = 0

    def _access(self, addr: int, op: str, data: Optional[bytes], fn) -> Optional[bytes]:
        raise NotImplementedError

    def read(self, addr: int) -> Optional[bytes]:
        self.accesses += 1
        return self._access(addr, READ, None, None)

    def write(self, addr: int, data: bytes) -> None:
        if len(data) != self.block_size:
            raise ValueError(f"{self.name}: block must be {self.block_size} bytes, got {len(data)}")
        self.accesses += 1
        self._access(addr, WRITE, data, None)

    def modify(self, addr: int, fn: Callable[[Optional[bytes]], Optional[bytes]]) -> Optional[bytes]:
        self.accesses += 1
        return self._access(addr, MODIFY, None, fn)

    @property
    def bytes_moved(self) -> int:
        """Logical (ANN-level) bytes: one block per access."""
        return self.accesses * self.block_size


class PassThroughDevice(BlockDevice):
    """Plain in-memory blocks; no obliviousness, same logical semantics."""

    def __init__(self, name: str, block_size: int, capacity: int):
        super().__init__()
        self.name = name
        self.block_size = block_size
        self.capacity = capacity
        self._blocks: dict[int, bytes] = {}

    def load(self, blocks: dict[int, bytes]) -> None:
        self._blocks = dict(blocks)

    def _access(self, addr, op, data, fn):
        if not 0 <= addr < self.capacity:
            raise IndexError(f"{self.name}: address {addr} out of range")
        old = self._blocks.get(addr)
        if op == WRITE:
            self._blocks[addr] = data
        elif op == MODIFY:
            new = fn(old)
            if new is not None:
                self._blocks[addr] = new
        return old


class OramDevice(BlockDevice):
    def __init__(self, name: str, oram: TreeOram):
        super().__init__()
        self.name = name
        self.oram = oram
        self.block_size = oram.config.block_size
        self.capacity = oram.config.N

    def load(self, blocks: dict[int, bytes]) -> None:
        self.oram.setup_bulk(blocks)

    def _access(self, addr, op, data, fn):
        return self.oram.access(addr, op, data, fn)

    @property
    def store(self):
        return self.oram.store
