from .accounting import bandwidth_ratio, coupled_bytes, decoupled_bytes
from .config import ConfigError, EngineConfig, load_config, parse_config
from .core import Engine, EngineAborted, EngineError, SearchParams, SearchStats, StorageParams, UpdateParams
from .devices import BlockDevice, OramDevice, PassThroughDevice
from .reference import coupled_reference, search_reference

__all__ = [
    "BlockDevice", "ConfigError", "Engine", "EngineAborted", "EngineConfig", "EngineError", "OramDevice", "PassThroughDevice",
    "SearchParams", "SearchStats", "StorageParams", "UpdateParams", "bandwidth_ratio", "coupled_bytes",
    "coupled_reference", "decoupled_bytes", "load_config", "parse_config",
    "search_reference",
]
