"""Untrusted slot-addressed bucket storage and the physical I/O trace.

Everything that crosses the trust boundary goes through a :class:`BlockStore`.
The store records one :class:`IoEvent` per physical request; the resulting
:class:`IoTrace` is exactly what a host observing the disk would see (plus a
trusted-side ``cause`` label used by the analysis tooling).
"""
from __future__ import annotations

import os
import threading
from array import array
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np


class StoreUsageError(ValueError):
    """Out-of-range address or malformed write."""


class IoKind(IntEnum):
    READ_SLOT = 0
    READ_BUCKET = 1
    WRITE_BUCKET = 2
    # per-level metadata fetch; only emitted by the RingORAM baseline variant
    READ_META = 3


class Cause(IntEnum):
    """Trusted-side label for why a request was issued. Not part of the wire."""
    OTHER = 0
    ACCESS = 1
    EVICT = 2
    RESHUFFLE = 3
    SETUP = 4


@dataclass(frozen=True)
class StoreGeometry:
    bucket_count: int
    slots_per_bucket: int
    slot_bytes: int

    def __post_init__(self):
        if min(self.bucket_count, self.slots_per_bucket, self.slot_bytes) <= 0:
            raise StoreUsageError(f"geometry fields must be positive: {self}")

    @property
    def bucket_bytes(self) -> int:
        return self.slots_per_bucket * self.slot_bytes

    @property
    def total_bytes(self) -> int:
        return self.bucket_count * self.bucket_bytes


class IoEvent(NamedTuple):
    kind: IoKind
    bucket_id: int
    slot_offset: Optional[int]
    bytes: int
    seq: int
    cause: Cause = Cause.OTHER


class IoTrace:
    """Immutable snapshot of recorded events, stored column-wise."""

    def __init__(self, kinds, buckets, offsets, nbytes, seqs, causes):
        self.kinds = np.asarray(kinds, dtype=np.int8)
        self.buckets = np.asarray(buckets, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)  # -1 for bucket-granular ops
        self.nbytes = np.asarray(nbytes, dtype=np.int64)
        self.seqs = np.asarray(seqs, dtype=np.int64)
        self.causes = np.asarray(causes, dtype=np.int8)

    @classmethod
    def empty(cls) -> "IoTrace":
        return cls([], [], [], [], [], [])

    def __len__(self) -> int:
        return int(self.kinds.size)

    @property
    def request_count(self) -> int:
        return len(self)

    @property
    def bytes_read(self) -> int:
        return int(self.nbytes[self.kinds != IoKind.WRITE_BUCKET].sum())

    @property
    def bytes_written(self) -> int:
        return int(self.nbytes[self.kinds == IoKind.WRITE_BUCKET].sum())

    @property
    def totals(self) -> tuple[int, int, int]:
        return (self.request_count, self.bytes_read, self.bytes_written)

    @property
    def events(self) -> list[IoEvent]:
        out = []
        for k, b, o, n, s, c in zip(self.kinds.tolist(), self.buckets.tolist(), self.offsets.tolist(),
                                    self.nbytes.tolist(), self.seqs.tolist(), self.causes.tolist()):
            out.append(IoEvent(IoKind(k), b, None if o < 0 else o, n, s, Cause(c)))
        return out

    def select(self, mask) -> "IoTrace":
        mask = np.asarray(mask, dtype=bool)
        return IoTrace(self.kinds[mask], self.buckets[mask], self.offsets[mask],
                       self.nbytes[mask], self.seqs[mask], self.causes[mask])

    def without(self, *causes: Cause) -> "IoTrace":
        return self.select(~np.isin(self.causes, [int(c) for c in causes]))

    def only(self, *causes: Cause) -> "IoTrace":
        return self.select(np.isin(self.causes, [int(c) for c in causes]))

    def shape(self) -> np.ndarray:
        """(kind, bytes) per event: the part of the trace that carries no randomness."""
        return np.stack([self.kinds.astype(np.int64), self.nbytes], axis=1)

    def concat(self, other: "IoTrace") -> "IoTrace":
        return IoTrace(*(np.concatenate([a, b]) for a, b in zip(self._cols(), other._cols())))

    def _cols(self):
        return (self.kinds, self.buckets, self.offsets, self.nbytes, self.seqs, self.causes)


class TraceRecorder:
    """Append-only event log with running totals. Totally orders events."""

    def __init__(self):
        self._lock = threading.Lock()
        self.enabled = True
        self.reset()

    def reset(self) -> None:
        self._kinds = array("b")
        self._buckets = array("q")
        self._offsets = array("q")
        self._nbytes = array("q")
        self._causes = array("b")
        self._seq0 = getattr(self, "_next_seq", 0)
        self._next_seq = self._seq0

    def record(self, kind: int, bucket: int, offset: int, nbytes: int, cause: int) -> None:
        if not self.enabled:
            return
        with self._lock:
            self._kinds.append(kind)
            self._buckets.append(bucket)
            self._offsets.append(offset)
            self._nbytes.append(nbytes)
            self._causes.append(cause)
            self._next_seq += 1

    def __len__(self) -> int:
        return len(self._kinds)

    def snapshot(self) -> IoTrace:
        with self._lock:
            n = len(self._kinds)
            return IoTrace(np.frombuffer(self._kinds, dtype=np.int8).copy() if n else [],
                           np.frombuffer(self._buckets, dtype=np.int64).copy() if n else [],
                           np.frombuffer(self._offsets, dtype=np.int64).copy() if n else [],
                           np.frombuffer(self._nbytes, dtype=np.int64).copy() if n else [],
                           np.arange(self._seq0, self._seq0 + n, dtype=np.int64),
                           np.frombuffer(self._causes, dtype=np.int8).copy() if n else [])


FaultHook = Callable[[IoKind, int, int, bytes], bytes]


class BlockStore:
    """Common bounds checking, tracing and fault injection for both backends."""

    def __init__(self, geometry: StoreGeometry):
        self.geometry = geometry
        self.recorder = TraceRecorder()
        self.fault_hook: Optional[FaultHook] = None
        self._meta_bytes = 0

    # -- backend primitives -------------------------------------------------
    def _get_slot(self, b: int, k: int) -> bytes:
        raise NotImplementedError

    def _get_bucket(self, b: int) -> list[bytes]:
        raise NotImplementedError

    def _put_bucket(self, b: int, cts: Sequence[bytes]) -> None:
        raise NotImplementedError

    def _put_slot(self, b: int, k: int, ct: bytes) -> None:
        raise NotImplementedError

    # -- public API -----------------------------------------------------------
    def _check_bucket(self, b: int) -> None:
        if not 0 <= b < self.geometry.bucket_count:
            raise StoreUsageError(f"bucket {b} out of range [0, {self.geometry.bucket_count})")

    def _check_slot(self, k: int) -> None:
        if not 0 <= k < self.geometry.slots_per_bucket:
            raise StoreUsageError(f"slot {k} out of range [0, {self.geometry.slots_per_bucket})")

    def read_slot(self, bucket_id: int, slot_offset: int, cause: int = Cause.OTHER) -> bytes:
        self._check_bucket(bucket_id)
        self._check_slot(slot_offset)
        ct = self._get_slot(bucket_id, slot_offset)
        self.recorder.record(IoKind.READ_SLOT, bucket_id, slot_offset, self.geometry.slot_bytes, cause)
        if self.fault_hook is not None:
            ct = self.fault_hook(IoKind.READ_SLOT, bucket_id, slot_offset, ct)
        return ct

    def read_bucket(self, bucket_id: int, cause: int = Cause.OTHER) -> list[bytes]:
        self._check_bucket(bucket_id)
        cts = self._get_bucket(bucket_id)
        self.recorder.record(IoKind.READ_BUCKET, bucket_id, -1, self.geometry.bucket_bytes, cause)
        if self.fault_hook is not None:
            cts = [self.fault_hook(IoKind.READ_BUCKET, bucket_id, k, c) for k, c in enumerate(cts)]
        return cts

    def write_bucket(self, bucket_id: int, ciphertexts: Sequence[bytes], cause: int = Cause.OTHER) -> None:
        self._check_bucket(bucket_id)
        g = self.geometry
        if len(ciphertexts) != g.slots_per_bucket:
            raise StoreUsageError(f"expected {g.slots_per_bucket} slots, got {len(ciphertexts)}")
        for ct in ciphertexts:
            if len(ct) != g.slot_bytes:
                raise StoreUsageError(f"slot ciphertext must be {g.slot_bytes} bytes, got {len(ct)}")
        self._put_bucket(bucket_id, ciphertexts)
        self.recorder.record(IoKind.WRITE_BUCKET, bucket_id, -1, g.bucket_bytes, cause)

    def read_meta(self, bucket_id: int, nbytes: int, cause: int = Cause.ACCESS) -> None:
        """Emulated remote-metadata fetch (baseline variant only); carries no payload."""
        self._check_bucket(bucket_id)
        self.recorder.record(IoKind.READ_META, bucket_id, -1, nbytes, cause)

    def trace_snapshot(self) -> IoTrace:
        return self.recorder.snapshot()

    def trace_reset(self) -> IoTrace:
        snap = self.recorder.snapshot()
        self.recorder.reset()
        return snap

    # -- adversary tools --------------------------------------------------------
    def peek_slot(self, bucket_id: int, slot_offset: int) -> bytes:
        """Untraced raw read, for the tamper/replay tooling."""
        self._check_bucket(bucket_id)
        self._check_slot(slot_offset)
        return self._get_slot(bucket_id, slot_offset)

    def corrupt(self, bucket_id: int, slot_offset: int, data: Optional[bytes] = None,
                flip_byte: Optional[int] = None, xor_mask: int = 0x01) -> None:
        """Overwrite a stored slot in place, bypassing the trace."""
        self._check_bucket(bucket_id)
        self._check_slot(slot_offset)
        if data is None:
            buf = bytearray(self._get_slot(bucket_id, slot_offset))
            pos = 0 if flip_byte is None else flip_byte
            buf[pos] ^= (xor_mask & 0xFF) or 0x01
            data = bytes(buf)
        if len(data) != self.geometry.slot_bytes:
            raise StoreUsageError("replacement ciphertext has the wrong size")
        self._put_slot(bucket_id, slot_offset, data)

    def close(self) -> None:
        pass


class MemoryBlockStore(BlockStore):
    def __init__(self, geometry: StoreGeometry):
        super().__init__(geometry)
        zero = bytes(geometry.slot_bytes)
        self._buckets: list[list[bytes]] = [[zero] * geometry.slots_per_bucket
                                            for _ in range(geometry.bucket_count)]

    def _get_slot(self, b, k):
        return self._buckets[b][k]

    def _get_bucket(self, b):
        return list(self._buckets[b])

    def _put_bucket(self, b, cts):
        self._buckets[b] = [bytes(c) for c in cts]

    def _put_slot(self, b, k, ct):
        row = list(self._buckets[b])
        row[k] = bytes(ct)
        self._buckets[b] = row


class FileBlockStore(BlockStore):
    """One flat file; bucket ``i`` lives at byte offset ``i * slots_per_bucket * slot_bytes``."""

    def __init__(self, geometry: StoreGeometry, path: str | os.PathLike, create: bool = True):
        super().__init__(geometry)
        self.path = os.fspath(path)
        if create:
            fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o600)
            os.ftruncate(fd, geometry.total_bytes)
        else:
            fd = os.open(self.path, os.O_RDWR)
            if os.fstat(fd).st_size != geometry.total_bytes:
                os.close(fd)
                raise StoreUsageError(f"{self.path}: size does not match geometry {geometry}")
        self._fd = fd
        self._locks = [threading.Lock() for _ in range(64)]

    def _get_slot(self, b, k):
        g = self.geometry
        return os.pread(self._fd, g.slot_bytes, b * g.bucket_bytes + k * g.slot_bytes)

    def _get_bucket(self, b):
        g = self.geometry
        raw = os.pread(self._fd, g.bucket_bytes, b * g.bucket_bytes)
        sb = g.slot_bytes
        return [raw[i:i + sb] for i in range(0, g.bucket_bytes, sb)]

    def _put_bucket(self, b, cts):
        with self._locks[b % len(self._locks)]:
            os.pwrite(self._fd, b"".join(cts), b * self.geometry.bucket_bytes)

    def _put_slot(self, b, k, ct):
        g = self.geometry
        with self._locks[b % len(self._locks)]:
            os.pwrite(self._fd, ct, b * g.bucket_bytes + k * g.slot_bytes)

    def close(self):
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
