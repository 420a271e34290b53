"""Closed-form bandwidth bookkeeping for the decoupled layout."""
from __future__ import annotations


def bandwidth_ratio(adjacency_bytes: float, hint_bytes: float, vector_bytes: float, prune_fraction: float) -> float:
    """Bytes per visited node in a coupled layout over bytes per visited node when decoupled.

    Coupled: every fetch moves adjacency and the full vector. Decoupled: every fetch moves
    adjacency plus the pruning hint, and only ``prune_fraction`` of the visited nodes get
    their full vector fetched afterwards.
    """
    return (adjacency_bytes + vector_bytes) / ((adjacency_bytes + hint_bytes) + prune_fraction * vector_bytes)


def decoupled_bytes(L_cand: int, L_prune: int, traversal_block: int, refinement_block: int) -> int:
    return L_cand * traversal_block + L_prune * refinement_block


def coupled_bytes(L_cand: int, adjacency_bytes: int, vector_bytes: int) -> int:
    return L_cand * (adjacency_bytes + vector_bytes)
