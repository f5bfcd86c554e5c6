"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Types and constants shared by the partitioning, communication and driver layers.
"""

from __future__ import annotations

from typing import Literal, get_args

Mode = Literal["nzp", "colp"]
Parity = Literal["even", "odd"]
CollectiveKind = Literal["allreduce", "create_groups", "barrier"]

VALID_MODES = get_args(Mode)

# Communicator contexts. Zone groups use f"{ZONE_CONTEXT}{zone_rank}".
WORLD_CONTEXT = "world"
ZONE_CONTEXT = "zone"

# Setup communication is bounded by SETUP_ROUNDS_PER_LOG_P * ceil(log2 P)
# + SETUP_ROUNDS_CONSTANT rounds: one neighbour exchange, three scans and two
# group-creation phases of at most ceil(log2 P) rounds each.
SETUP_ROUNDS_PER_LOG_P = 5
SETUP_ROUNDS_CONSTANT = 1

DEFAULT_WRAPS = 1000

RUN_CSV_COLUMNS = (
    "mode",
    "P",
    "wraps",
    "elapsed_seconds",
    "setup_rounds",
    "spmv_allreduces",
    "zone_scalars_reduced",
    "max_nnz_per_rank",
    "min_nnz_per_rank",
    "delta_percent",
)

REPORT_CSV_COLUMNS = (
    "P",
    "colp_delta_percent",
    "nzp_zones",
    "nzp_delta_percent",
)


def parity_of(zone_rank: int) -> Parity:
    """Return the scheduling parity of a zone."""
    return "even" if zone_rank % 2 == 0 else "odd"
