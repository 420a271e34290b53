from .audit import AuditReport, EngineFactory, audit_obliviousness
from .datasets import (gen_dataset, gen_vectors, read_bvecs, read_fvecs, read_ivecs, read_vectors, write_bvecs,
                       write_fvecs, write_ivecs)
from .metrics import brute_force_knn, measure_multipliers, oram_multiplier_run, recall_at_k
from .stash import LoadCheck, StashReport, bucket_load_check, simulate_stash

__all__ = [
    "AuditReport", "EngineFactory", "LoadCheck", "StashReport", "audit_obliviousness", "brute_force_knn",
    "bucket_load_check", "gen_dataset", "gen_vectors", "measure_multipliers", "oram_multiplier_run", "read_bvecs",
    "read_fvecs", "read_ivecs", "read_vectors", "recall_at_k", "simulate_stash", "write_bvecs", "write_fvecs",
    "write_ivecs",
]
