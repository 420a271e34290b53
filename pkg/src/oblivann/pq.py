"""Product quantization: one byte per subspace, asymmetric distance tables."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels

MAGIC = b"OBVPQ\x00\x00\x00"
FORMAT_VERSION = 1


class TrainingError(ValueError):
    pass


@dataclass
class PqCodebook:
    dims: int
    m: int
    k_c: int
    centroids: np.ndarray          # (m, k_c, dims_per_subspace), float32
    train_mse: list = field(default_factory=list)

    @property
    def dims_per_subspace(self) -> int:
        return self.centroids.shape[2]

    @property
    def code_bytes(self) -> int:
        return self.m

    def _split(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dims:
            raise ValueError(f"expected {self.dims}-dimensional vectors, got {X.shape[1]}")
        pad = self.m * self.dims_per_subspace - self.dims
        if pad:
            X = np.concatenate([X, np.zeros((X.shape[0], pad), dtype=np.float32)], axis=1)
        return X.reshape(X.shape[0], self.m, self.dims_per_subspace)

    def encode(self, X) -> np.ndarray:
        """(n, m) uint8 codes, nearest centroid per subspace with lowest-index ties."""
        parts = self._split(X)
        codes = np.empty((parts.shape[0], self.m), dtype=np.uint8)
        for s in range(self.m):
            codes[:, s] = kernels.nearest_centroid(np.ascontiguousarray(parts[:, s, :]), self.centroids[s])
        return codes

    def decode(self, codes) -> np.ndarray:
        codes = np.atleast_2d(np.asarray(codes)).astype(np.intp)
        rec = np.stack([self.centroids[s][codes[:, s]] for s in range(self.m)], axis=1)
        return rec.reshape(codes.shape[0], -1)[:, :self.dims]

    def adc_table(self, q) -> np.ndarray:
        """(m, k_c) table of squared distances from each query subvector to each centroid."""
        qs = self._split(q)[0].astype(np.float64)
        diff = self.centroids.astype(np.float64) - qs[:, None, :]
        return np.einsum("mkd,mkd->mk", diff, diff)

    def approx_distances(self, table: np.ndarray, codes) -> np.ndarray:
        codes = np.atleast_2d(np.asarray(codes, dtype=np.uint8))
        return kernels.adc_distances(table, codes)

    def to_bytes(self) -> bytes:
        head = MAGIC + struct.pack("<5I", FORMAT_VERSION, self.dims, self.m, self.k_c, self.dims_per_subspace)
        return head + np.ascontiguousarray(self.centroids, dtype="<f4").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PqCodebook":
        if raw[:8] != MAGIC:
            raise ValueError("not a PQ codebook")
        ver, dims, m, k_c, ds = struct.unpack_from("<5I", raw, 8)
        if ver != FORMAT_VERSION:
            raise ValueError(f"unsupported codebook version {ver}")
        body = raw[28:]
        if len(body) != m * k_c * ds * 4:
            raise ValueError("codebook payload size mismatch")
        cent = np.frombuffer(body, dtype="<f4").reshape(m, k_c, ds).astype(np.float32)
        return cls(dims=dims, m=m, k_c=k_c, centroids=cent)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PqCodebook":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def approx_distance(table: np.ndarray, code) -> float:
    code = np.asarray(code, dtype=np.intp)
    return float(table[np.arange(code.size), code].sum())


def _kmeans(Xs: np.ndarray, k: int, iters: int, rng: np.random.Generator):
    uniq = np.unique(Xs, axis=0)
    if uniq.shape[0] >= k:
        C = uniq[np.sort(rng.choice(uniq.shape[0], size=k, replace=False))].astype(np.float32)
    else:
        extra = Xs[rng.choice(Xs.shape[0], size=k - uniq.shape[0], replace=True)]
        C = np.concatenate([uniq, extra]).astype(np.float32)
    hist = []
    for _ in range(iters):
        assign = kernels.nearest_centroid(Xs, C)
        diff = Xs.astype(np.float64) - C[assign].astype(np.float64)
        hist.append(float(np.einsum("ij,ij->", diff, diff)))
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros((k, Xs.shape[1]), dtype=np.float64)
        np.add.at(sums, assign, Xs.astype(np.float64))
        nz = counts > 0
        C = C.copy()
        C[nz] = (sums[nz] / counts[nz, None]).astype(np.float32)
    assign = kernels.nearest_centroid(Xs, C)
    diff = Xs.astype(np.float64) - C[assign].astype(np.float64)
    hist.append(float(np.einsum("ij,ij->", diff, diff)))
    return C, hist


def train(vectors, m: int, k_c: int = 256, iters: int = 20, seed: int = 0) -> PqCodebook:
    """Per-subspace k-means. The last subspace is zero-padded when m does not divide the dimension."""
    X = np.asarray(vectors, dtype=np.float32)
    if X.ndim != 2:
        raise TrainingError("vectors must be a 2-D array")
    n, dims = X.shape
    if not 1 <= k_c <= 256:
        raise TrainingError("k_c must be in [1, 256] so codes fit one byte")
    if m < 1:
        raise TrainingError("m must be >= 1")
    if n < k_c:
        raise TrainingError(f"need at least k_c={k_c} training vectors, got {n}")
    ds = -(-dims // m)
    pad = m * ds - dims
    if pad:
        X = np.concatenate([X, np.zeros((n, pad), dtype=np.float32)], axis=1)
    parts = X.reshape(n, m, ds)
    rng = np.random.default_rng(seed)
    cents = np.empty((m, k_c, ds), dtype=np.float32)
    mse = np.zeros(iters + 1)
    for s in range(m):
        C, hist = _kmeans(np.ascontiguousarray(parts[:, s, :]), k_c, iters, rng)
        cents[s] = C
        mse += np.array(hist) / n
    return PqCodebook(dims=dims, m=m, k_c=k_c, centroids=cents, train_mse=mse.tolist())
