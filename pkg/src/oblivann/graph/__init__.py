from .packing import (PAD_ID, TOMBSTONE_DEGREE, PackedIndex, PackingError, adjacency_bytes, decode_refinement,
                      decode_traversal, encode_refinement, encode_traversal, pack, unpack)
from .vamana import BuildParams, GraphError, GraphIndex, build, load_graph, medoid, robust_prune, save_graph

__all__ = [
    "PAD_ID", "TOMBSTONE_DEGREE", "BuildParams", "GraphError", "GraphIndex", "PackedIndex", "PackingError",
    "adjacency_bytes", "build", "decode_refinement", "decode_traversal", "encode_refinement", "encode_traversal",
    "load_graph", "medoid", "pack", "robust_prune", "save_graph", "unpack",
]
