"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication."""

from nzpart._comm import Harness, RankEndpoint, run_ranks
from nzpart._engine import (
    ColpEngine,
    NzpEngine,
    OverlappedVector,
    VectorSlice,
    axpy,
    distribute_vector,
    distributed_spmv,
    distributed_spvtm,
    gather_vector,
    overlapped_dot,
    overlapped_norm,
    run_benchmark,
    run_wraps,
    scale,
    simulate,
    verify_products,
)
from nzpart._matgen import (
    GenParams,
    gen_random,
    sort_columns_descending,
    worked_example_matrix,
)
from nzpart._matio import (
    import_matrix_market,
    read_span,
    read_triple_stream,
    write_triple_stream,
)
from nzpart._partition import (
    build_cover,
    chunk_bounds,
    column_partition,
    imbalance,
    zones_oracle,
)
from nzpart._sparse import (
    CooMatrix,
    CscMatrix,
    coo_to_csc,
    dense_oracle,
    local_spmv,
    local_spvtm,
)
from nzpart._version import __version__

__all__ = [
    "ColpEngine",
    "CooMatrix",
    "CscMatrix",
    "GenParams",
    "Harness",
    "NzpEngine",
    "OverlappedVector",
    "RankEndpoint",
    "VectorSlice",
    "__version__",
    "axpy",
    "build_cover",
    "chunk_bounds",
    "column_partition",
    "coo_to_csc",
    "dense_oracle",
    "distribute_vector",
    "distributed_spmv",
    "distributed_spvtm",
    "gather_vector",
    "gen_random",
    "imbalance",
    "import_matrix_market",
    "local_spmv",
    "local_spvtm",
    "overlapped_dot",
    "overlapped_norm",
    "read_span",
    "read_triple_stream",
    "run_benchmark",
    "run_ranks",
    "run_wraps",
    "scale",
    "simulate",
    "sort_columns_descending",
    "verify_products",
    "worked_example_matrix",
    "write_triple_stream",
    "zones_oracle",
]
