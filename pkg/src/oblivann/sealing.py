"""Slot sealing with AES-GCM, bound to (bucket, physical slot, bucket version).

Wire format of one sealed slot::

    nonce (12 B) || AES-GCM ciphertext of plaintext || tag (16 B)
    plaintext = addr (u64 LE) || data (block_size B)

so ``slot_bytes = block_size + 36`` for every slot, real or dummy. The
associated data is ``bucket_id (u64 LE) || slot_offset (u32 LE) || version (u64 LE)``.
Nonces are a 4-byte per-key prefix followed by a 64-bit counter, so a key never
reuses a nonce within its lifetime.
"""
from __future__ import annotations

import hashlib
import itertools
import os
import struct
from typing import NamedTuple, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

DUMMY_ADDR = 0xFFFF_FFFF_FFFF_FFFF
NONCE_BYTES = 12
TAG_BYTES = 16
ADDR_BYTES = 8
OVERHEAD = NONCE_BYTES + TAG_BYTES + ADDR_BYTES

_AAD = struct.Struct("<QIQ")
_ADDR = struct.Struct("<Q")


class IntegrityFailure(Exception):
    """A ciphertext failed authentication. The owning ORAM must abort."""


class SlotPayload(NamedTuple):
    addr: int
    data: bytes

    @property
    def is_dummy(self) -> bool:
        return self.addr == DUMMY_ADDR


def slot_bytes_for(block_size: int) -> int:
    return block_size + OVERHEAD


def pack_aad(bucket_id: int, slot_offset: int, version: int) -> bytes:
    return _AAD.pack(bucket_id, slot_offset, version)


class SealKey:
    """AEAD key for one ORAM instance.

    ``seed`` makes the key and nonce stream deterministic (reproducible disk
    images for tests); without it the key comes from ``os.urandom``.
    """

    def __init__(self, block_size: int, key: Optional[bytes] = None, seed: Optional[int] = None,
                 label: bytes = b""):
        if block_size <= 0:
            raise ValueError("block_size must be positive")
        self.block_size = int(block_size)
        if key is None:
            if seed is None:
                key = os.urandom(32)
                prefix = os.urandom(4)
            else:
                h = hashlib.blake2b(_ADDR.pack(seed & 0xFFFF_FFFF_FFFF_FFFF) + label,
                                    digest_size=36, person=b"oblivann-seal").digest()
                key, prefix = h[:32], h[32:]
        else:
            prefix = hashlib.blake2b(key, digest_size=4, person=b"oblivann-nonce").digest()
        if len(key) not in (16, 24, 32):
            raise ValueError("AES key must be 16, 24 or 32 bytes")
        self._aead = AESGCM(key)
        self._key = bytes(key)
        self._fingerprint = hashlib.blake2b(key, digest_size=8).hexdigest()
        self._prefix = prefix
        self._counter = itertools.count(1)   # next() on itertools.count is atomic under the GIL
        self._dummy_plain = _ADDR.pack(DUMMY_ADDR) + bytes(self.block_size)

    def export(self) -> bytes:
        """Key material plus nonce state, for trusted-side persistence only."""
        peek = next(self._counter)
        self._counter = itertools.count(peek)
        return struct.pack("<B", len(self._key)) + self._key + self._prefix + _ADDR.pack(peek)

    @classmethod
    def restore(cls, block_size: int, blob: bytes) -> "SealKey":
        n = blob[0]
        key, prefix = blob[1:1 + n], blob[1 + n:5 + n]
        (ctr,) = _ADDR.unpack_from(blob, 5 + n)
        obj = cls(block_size, key=key)
        obj._prefix = prefix
        obj._counter = itertools.count(ctr)
        return obj

    @property
    def slot_bytes(self) -> int:
        return self.block_size + OVERHEAD

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    def _nonce(self) -> bytes:
        return self._prefix + _ADDR.pack(next(self._counter))

    def seal(self, bucket_id: int, slot_offset: int, version: int, addr: int, data: bytes) -> bytes:
        if len(data) != self.block_size:
            raise ValueError(f"payload must be {self.block_size} bytes, got {len(data)}")
        nonce = self._nonce()
        return nonce + self._aead.encrypt(nonce, _ADDR.pack(addr) + data,
                                          _AAD.pack(bucket_id, slot_offset, version))

    def seal_dummy(self, bucket_id: int, slot_offset: int, version: int) -> bytes:
        nonce = self._nonce()
        return nonce + self._aead.encrypt(nonce, self._dummy_plain,
                                          _AAD.pack(bucket_id, slot_offset, version))

    def open(self, bucket_id: int, slot_offset: int, version: int, ciphertext: bytes) -> SlotPayload:
        if len(ciphertext) != self.slot_bytes:
            raise IntegrityFailure(f"ciphertext length {len(ciphertext)} != {self.slot_bytes}")
        try:
            plain = self._aead.decrypt(ciphertext[:NONCE_BYTES], ciphertext[NONCE_BYTES:],
                                       _AAD.pack(bucket_id, slot_offset, version))
        except InvalidTag:
            raise IntegrityFailure(
                f"authentication failed at bucket={bucket_id} slot={slot_offset} ver={version}") from None
        return SlotPayload(_ADDR.unpack_from(plain)[0], plain[ADDR_BYTES:])

    def open_bucket(self, bucket_id: int, version: int, ciphertexts) -> list[tuple[int, bytes]]:
        """Open every slot of a bucket in physical order; returns plain (addr, data) tuples."""
        dec, pack, unpack = self._aead.decrypt, _AAD.pack, _ADDR.unpack_from
        sb = self.slot_bytes
        out = []
        try:
            for k, ct in enumerate(ciphertexts):
                if len(ct) != sb:
                    raise InvalidTag
                plain = dec(ct[:NONCE_BYTES], ct[NONCE_BYTES:], pack(bucket_id, k, version))
                out.append((unpack(plain)[0], plain[ADDR_BYTES:]))
        except InvalidTag:
            raise IntegrityFailure(
                f"authentication failed at bucket={bucket_id} slot={len(out)} ver={version}") from None
        return out

    def seal_dummies(self, bucket_id: int, version: int, offsets) -> list[bytes]:
        enc, pack, cnt, pre, plain = self._aead.encrypt, _AAD.pack, self._counter, self._prefix, self._dummy_plain
        upack = _ADDR.pack
        out = []
        for k in offsets:
            nonce = pre + upack(next(cnt))
            out.append(nonce + enc(nonce, plain, pack(bucket_id, k, version)))
        return out
