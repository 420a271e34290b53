from .client import (MODIFY, READ, WRITE, ArrayLeafStream, DebugDisabled, LeafStream, OramAborted, SetupError,
                     StashOverflow, TreeOram)
from .params import (BoundInapplicable, Multipliers, OramConfig, PlanningError, Variant, analytical_multipliers,
                     depth_for, dummy_slots_for, eviction_leaf, plan, q_value, reshuffle_costs, reverse_digits,
                     stash_bound)
from .persist import dump_state, load_state, parse_state, save_state
from .sim import SimResult, simulate

__all__ = [
    "MODIFY", "READ", "WRITE", "ArrayLeafStream", "BoundInapplicable", "DebugDisabled", "LeafStream", "Multipliers",
    "OramAborted", "OramConfig", "PlanningError", "SetupError", "SimResult", "StashOverflow", "TreeOram",
    "Variant", "analytical_multipliers", "depth_for", "dummy_slots_for", "dump_state", "eviction_leaf",
    "load_state", "parse_state", "plan", "q_value", "reshuffle_costs", "reverse_digits", "save_state",
    "simulate", "stash_bound",
]
