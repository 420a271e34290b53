"""INI-style engine configuration.

Example::

    [data]
    vectors = base.fvecs
    queries = query.fvecs
    truth = truth.ivecs
    index = work/index

    [index]
    max_degree = 32
    build_list_size = 128
    alpha = 1.01
    traversal_hint_bytes = 16
    pruning_hint_bytes = 64

    [oram]
    d = 8
    Z = 256
    reshuffle_rate = 0.001

    [search]
    K = 10
    L_cand = 128
    L_prune = 32
    W = 4

    [engine]
    seed = 0

Relative paths are resolved against the directory holding the file.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Optional

from ..graph.vamana import BuildParams
from .core import SearchParams, StorageParams, UpdateParams


class ConfigError(ValueError):
    pass


@dataclass
class EngineConfig:
    vectors: Optional[str] = None
    queries: Optional[str] = None
    truth: Optional[str] = None
    index: Optional[str] = None
    build: BuildParams = field(default_factory=BuildParams)
    traversal_hint_bytes: int = 16
    pruning_hint_bytes: int = 64
    pq_iters: int = 20
    storage: StorageParams = field(default_factory=StorageParams)
    search: SearchParams = field(default_factory=SearchParams)
    update: UpdateParams = field(default_factory=UpdateParams)
    seed: int = 0


def _path(base: str, value: Optional[str]) -> Optional[str]:
    if not value:
        return None
    return value if os.path.isabs(value) else os.path.normpath(os.path.join(base, value))


def parse_config(text: str, base_dir: str = ".") -> EngineConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str          # keep Z / K / L_cand as written
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"data", "index", "oram", "search", "engine"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown section(s): {sorted(extra)}")

    def get(sec, key, conv, default):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key)
        try:
            if conv is bool:
                return cp.getboolean(sec, key)
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from exc

    seed = get("engine", "seed", int, 0)
    try:
        build = BuildParams(max_degree=get("index", "max_degree", int, 32),
                            build_list_size=get("index", "build_list_size", int, 128),
                            alpha=get("index", "alpha", float, 1.01), seed=seed)
        storage = StorageParams(d=get("oram", "d", int, 8), Z=get("oram", "Z", int, 256),
                                reshuffle_rate=get("oram", "reshuffle_rate", float, 1e-3),
                                variant=get("oram", "variant", str, StorageParams.variant),
                                backend=get("oram", "backend", str, "oram"),
                                store=get("oram", "store", str, "memory"),
                                store_dir=_path(base_dir, get("oram", "store_dir", str, None)),
                                insert_capacity=get("oram", "insert_capacity", int, 0), seed=seed)
        search = SearchParams(K=get("search", "K", int, 10), L_cand=get("search", "L_cand", int, 128),
                              L_prune=get("search", "L_prune", int, 32), W=get("search", "W", int, 4))
        update = UpdateParams(build_list_size=build.build_list_size, alpha=build.alpha,
                              consolidate_fraction=get("engine", "consolidate_fraction", float, 0.05))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return EngineConfig(
        vectors=_path(base_dir, get("data", "vectors", str, None)),
        queries=_path(base_dir, get("data", "queries", str, None)),
        truth=_path(base_dir, get("data", "truth", str, None)),
        index=_path(base_dir, get("data", "index", str, None)),
        build=build,
        traversal_hint_bytes=get("index", "traversal_hint_bytes", int, 16),
        pruning_hint_bytes=get("index", "pruning_hint_bytes", int, 64),
        pq_iters=get("index", "pq_iters", int, 20),
        storage=storage, search=search, update=update, seed=seed)


def load_config(path: str | os.PathLike) -> EngineConfig:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, os.path.dirname(os.path.abspath(path)))
