"""fvecs / bvecs / ivecs I/O and synthetic dataset generation.

Each record is a little-endian int32 component count followed by the
components (float32 for fvecs, uint8 for bvecs, int32 for ivecs). There is no
file-level header, so an empty dataset is an empty file.
"""
from __future__ import annotations

import os

import numpy as np


class DatasetError(ValueError):
    pass


def _read_vecs(path, comp_dtype) -> np.ndarray:
    comp = np.dtype(comp_dtype).newbyteorder("<")
    raw = np.fromfile(os.fspath(path), dtype=np.uint8)
    if raw.size == 0:
        return np.zeros((0, 0), dtype=comp.newbyteorder("="))
    dim = int(raw[:4].view("<i4")[0])
    if dim <= 0:
        raise DatasetError(f"{path}: bad dimension header {dim}")
    rec = 4 + dim * comp.itemsize
    if raw.size % rec:
        raise DatasetError(f"{path}: size {raw.size} is not a multiple of the record size {rec}")
    recs = raw.reshape(-1, rec)
    dims = recs[:, :4].copy().view("<i4").ravel()
    if (dims != dim).any():
        raise DatasetError(f"{path}: records have differing dimensions")
    return recs[:, 4:].copy().view(comp).astype(comp.newbyteorder("="))


def _write_vecs(path, X, comp_dtype) -> None:
    comp = np.dtype(comp_dtype).newbyteorder("<")
    X = np.asarray(X)
    if X.ndim != 2:
        raise DatasetError("expected a 2-D array")
    n, dim = X.shape
    with open(os.fspath(path), "wb") as fh:
        if n == 0:
            return
        head = np.full((n, 1), dim, dtype="<i4").view(np.uint8)
        body = np.ascontiguousarray(X.astype(comp)).view(np.uint8).reshape(n, -1)
        fh.write(np.hstack([head, body]).tobytes())


def read_fvecs(path) -> np.ndarray:
    return _read_vecs(path, np.float32)


def write_fvecs(path, X) -> None:
    _write_vecs(path, X, np.float32)


def read_bvecs(path) -> np.ndarray:
    return _read_vecs(path, np.uint8)


def write_bvecs(path, X) -> None:
    _write_vecs(path, X, np.uint8)


def read_ivecs(path) -> np.ndarray:
    return _read_vecs(path, np.int32)


def write_ivecs(path, X) -> None:
    _write_vecs(path, X, np.int32)


def read_vectors(path) -> np.ndarray:
    """Load by extension; bvecs are widened to float32."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".fvecs":
        return read_fvecs(path)
    if ext == ".bvecs":
        return read_bvecs(path).astype(np.float32)
    if ext == ".npy":
        return np.load(path).astype(np.float32)
    raise DatasetError(f"unsupported vector file {path}")


def gen_vectors(n: int, dims: int, distribution: str = "uniform", seed: int = 0, centers: int = 10,
                spread: float = 0.02, return_labels: bool = False):
    """Uniform in [0,1)^dims, or a Gaussian mixture with ``centers`` components.

    Mixture centers are uniform in [0,1)^dims and every point is its center plus
    isotropic noise of standard deviation ``spread``.
    """
    if n < 0 or dims <= 0:
        raise DatasetError("need n >= 0 and dims > 0")
    rng = np.random.default_rng(seed)
    if distribution == "uniform":
        X = rng.random((n, dims), dtype=np.float32)
        labels = np.zeros(n, dtype=np.int64)
    elif distribution in ("gmm", "gaussian-mixture", "clustered"):
        C = rng.random((centers, dims))
        labels = rng.integers(0, centers, size=n)
        X = (C[labels] + spread * rng.standard_normal((n, dims))).astype(np.float32)
    else:
        raise DatasetError(f"unknown distribution {distribution!r}")
    return (X, labels) if return_labels else X


def gen_dataset(path, n: int, dims: int, distribution: str = "uniform", seed: int = 0, **kw) -> np.ndarray:
    X = gen_vectors(n, dims, distribution, seed, **kw)
    write_fvecs(path, X if n else np.zeros((0, dims), dtype=np.float32))
    return X
