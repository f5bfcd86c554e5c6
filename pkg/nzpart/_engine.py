"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Distributed SpMV and SpVTM on top of the rank harness.

Two engines share one interface. `NzpEngine` works on contiguous nonzero
chunks: SpMV is a local multiply followed by one allreduce of the m-vector,
and SpVTM is a local multiply followed by one scalar reduction per overlap
zone, even zones first. `ColpEngine` is the column-partition baseline,
whose SpVTM needs no communication at all.

Length-n vectors are overlapped: rank i stores the coefficients of its
cover J_i, so a column split over several ranks is stored on each of them.
Length-m vectors are replicated on every rank.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from pathlib import Path
from typing import Callable, NamedTuple, Sequence, TypeVar, Union

import numpy as np

from nzpart._comm import GroupHandle, Harness, RankEndpoint, run_ranks
from nzpart._matio import read_column_span, read_header, read_span
from nzpart._partition import (
    Cover,
    ImbalanceReport,
    LocalMatrix,
    OverlapZone,
    imbalance,
    local_matrix,
)
from nzpart._sparse import (
    CooMatrix,
    DenseVector,
    dense_oracle,
    local_spmv,
    local_spvtm,
    max_scaled_error,
    spmv_scale,
    spvtm_scale,
)
from nzpart._zone_setup import ZoneSetup, setup
from nzpart.definitions import (
    DEFAULT_WRAPS,
    VALID_MODES,
    WORLD_CONTEXT,
    ZONE_CONTEXT,
    Mode,
)
from nzpart.utils import (
    ConsistencyError,
    InputValidationError,
    UnsupportedConfigurationError,
)

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")

ReplicatedVector = np.ndarray
MatrixSource = Union[CooMatrix, str, Path]
WRAPS_SECTION = "wraps"
VERIFY_TOLERANCE = 1e-10


class VectorSlice(NamedTuple):
    """The part of an overlapped vector stored on one rank."""

    rank: int
    col_ids: np.ndarray
    values: np.ndarray


@dataclasses.dataclass(frozen=True)
class OverlappedVector:
    """A length-n vector stored as per-rank slices over the covers."""

    n: int
    slices: tuple[VectorSlice, ...]

    @property
    def P(self) -> int:
        """Number of ranks."""
        return len(self.slices)

    def slice(self, rank: int) -> VectorSlice:
        """The slice of `rank`."""
        return self.slices[rank]

    def stored_coefficients(self) -> int:
        """Total number of coefficients over all ranks, replicas included."""
        return sum(len(s.values) for s in self.slices)

    @classmethod
    def from_slices(cls, n: int, slices: Sequence[VectorSlice]) -> OverlappedVector:
        """Collect per-rank slices, e.g. as returned by `simulate`."""
        ordered = sorted(slices, key=lambda s: s.rank)
        if [s.rank for s in ordered] != list(range(len(ordered))):
            msg = f"slices must come from ranks 0..P-1, got {[s.rank for s in ordered]}"
            raise InputValidationError(msg)
        return cls(n, tuple(ordered))


def _check_length(x: np.ndarray, length: int, what: str) -> np.ndarray:
    vec = np.asarray(x, dtype=np.float64).reshape(-1)
    if len(vec) != length:
        msg = f"{what} has length {len(vec)}, expected {length}"
        raise InputValidationError(msg)
    return vec


def distribute_vector(x: DenseVector, cover: Cover) -> OverlappedVector:
    """Give every rank the coefficients of its cover."""
    vec = _check_length(x, cover.n, "x")
    slices = tuple(
        VectorSlice(rank, cols, vec[cols].copy())
        for rank, cols in enumerate(cover.columns)
    )
    return OverlappedVector(cover.n, slices)


def gather_vector(xo: OverlappedVector) -> DenseVector:
    """Assemble the global vector, checking that all replicas agree bit for bit.

    Columns stored on no rank are 0.
    """
    x = np.zeros(xo.n, dtype=np.float64)
    owner = np.full(xo.n, -1, dtype=np.int64)
    for s in xo.slices:
        cols = np.asarray(s.col_ids, dtype=np.int64)
        values = np.asarray(s.values, dtype=np.float64)
        seen = owner[cols] >= 0
        differ = seen & (x[cols].view(np.int64) != values.view(np.int64))
        if differ.any():
            bad = int(np.flatnonzero(differ)[0])
            col = int(cols[bad])
            msg = (
                f"column {col} differs between rank {owner[col]} ({x[col]!r})"
                f" and rank {s.rank} ({values[bad]!r})"
            )
            raise ConsistencyError(msg)
        fresh = ~seen
        x[cols[fresh]] = values[fresh]
        owner[cols[fresh]] = s.rank
    return x


class RankEngine:
    """Per-rank state of a distributed multiply; confined to the rank's thread."""

    mode: Mode

    def __init__(self, endpoint: RankEndpoint, local: LocalMatrix) -> None:
        """Bind the local matrix of `endpoint.rank`."""
        if local.rank != endpoint.rank or local.P != endpoint.P:
            msg = (
                f"local matrix of rank {local.rank}/{local.P} given to"
                f" rank {endpoint.rank}/{endpoint.P}"
            )
            raise InputValidationError(msg)
        self.endpoint = endpoint
        self.local = local
        self.spmv_calls = 0
        self.spvtm_calls = 0

    @property
    def rank(self) -> int:
        """The rank this engine runs on."""
        return self.endpoint.rank

    @property
    def m(self) -> int:
        """Number of matrix rows."""
        return self.local.csc.m

    @property
    def n(self) -> int:
        """Number of matrix columns."""
        return self.local.n

    @property
    def cover(self) -> np.ndarray:
        """Global columns whose coefficients this rank stores."""
        return self.local.cover

    @property
    def setup_rounds(self) -> int:
        """Rounds spent building the engine."""
        return 0

    @property
    def zones(self) -> list[OverlapZone]:
        """Overlap zones this rank is a member of."""
        return []

    def owned_mask(self) -> np.ndarray:
        """Which stored coefficients this rank counts in inner products."""
        return np.ones(len(self.cover), dtype=bool)

    def local_slice(self, x: DenseVector) -> VectorSlice:
        """Restrict a global length-n vector to the cover."""
        vec = _check_length(x, self.n, "x")
        return VectorSlice(self.rank, self.cover, vec[self.cover].copy())

    def check_slice(self, xo: VectorSlice) -> None:
        """Raise unless `xo` is laid out over this rank's cover."""
        if xo.rank != self.rank or not np.array_equal(xo.col_ids, self.cover):
            msg = f"vector slice of rank {xo.rank} does not match the cover of rank {self.rank}"
            raise InputValidationError(msg)

    def spmv(self, xo: VectorSlice) -> ReplicatedVector:
        """``y = A x``, identical on every rank."""
        self.check_slice(xo)
        self.spmv_calls += 1
        y_local = local_spmv(self.local.csc, xo.values)
        return self.endpoint.allreduce_sum(self.endpoint.world, y_local)

    def spvtm(self, v: ReplicatedVector) -> VectorSlice:
        """``u^T = v^T A``, as this rank's slice of an overlapped vector."""
        self.spvtm_calls += 1
        u = local_spvtm(v, self.local.csc)
        return VectorSlice(self.rank, self.cover, self._reduce_zones(u))

    def _reduce_zones(self, u: np.ndarray) -> np.ndarray:
        return u


class NzpEngine(RankEngine):
    """Nonzero-partitioned engine with overlap-zone reductions."""

    mode: Mode = "nzp"

    def __init__(
        self,
        endpoint: RankEndpoint,
        local: LocalMatrix,
        zone_setup: ZoneSetup,
    ) -> None:
        """Wrap an already computed zone setup; see `create`."""
        super().__init__(endpoint, local)
        self.zone_setup = zone_setup
        # (group, local position of the zone column), even phase first
        self._phases: list[tuple[GroupHandle, int]] = []
        for zone, group in (
            (zone_setup.membership.even_zone, zone_setup.even_group),
            (zone_setup.membership.odd_zone, zone_setup.odd_group),
        ):
            if zone is None or group is None:
                continue
            position = 0 if zone.column == local.j_first else len(local.cover) - 1
            self._phases.append((group, position))

    @classmethod
    def create(cls, endpoint: RankEndpoint, local: LocalMatrix) -> NzpEngine:
        """Run the zone setup on this rank and build the engine."""
        return cls(endpoint, local, setup(endpoint, local.j_first, local.j_last))

    @property
    def setup_rounds(self) -> int:
        """Rounds spent in the zone setup."""
        return self.zone_setup.rounds

    @property
    def zones(self) -> list[OverlapZone]:
        """Overlap zones this rank is a member of."""
        return self.zone_setup.membership.zones()

    def owned_mask(self) -> np.ndarray:
        """All stored coefficients except a first column shared with the left neighbour."""
        mask = np.ones(len(self.cover), dtype=bool)
        if self.zone_setup.vars.need_left:
            mask[0] = False
        return mask

    def _reduce_zones(self, u: np.ndarray) -> np.ndarray:
        for group, position in self._phases:
            u[position] = self.endpoint.allreduce_sum(group, u[position : position + 1])[0]
        return u


class ColpEngine(RankEngine):
    """Column-partition baseline; covers are disjoint."""

    mode: Mode = "colp"


def build_engine(endpoint: RankEndpoint, local: LocalMatrix, mode: Mode) -> RankEngine:
    """Create the engine of one rank."""
    if mode == "nzp":
        return NzpEngine.create(endpoint, local)
    if mode == "colp":
        return ColpEngine(endpoint, local)
    msg = f"Unknown mode `{mode}`, expected one of {VALID_MODES}"
    raise InputValidationError(msg)


def overlapped_dot(engine: RankEngine, a: VectorSlice, b: VectorSlice) -> float:
    """Global inner product; each overlap column is counted by its lowest member."""
    for xo in (a, b):
        engine.check_slice(xo)
    mask = engine.owned_mask()
    local = float(np.dot(a.values[mask], b.values[mask]))
    return float(engine.endpoint.allreduce_sum(engine.endpoint.world, [local])[0])


def overlapped_norm(engine: RankEngine, a: VectorSlice) -> float:
    """Euclidean norm of an overlapped vector."""
    return math.sqrt(overlapped_dot(engine, a, a))


def axpy(alpha: float, x: VectorSlice, y: VectorSlice) -> VectorSlice:
    """``alpha * x + y`` on one rank; no communication."""
    if x.rank != y.rank or not np.array_equal(x.col_ids, y.col_ids):
        msg = "axpy operands are laid out over different covers"
        raise InputValidationError(msg)
    return VectorSlice(y.rank, y.col_ids, alpha * x.values + y.values)


def scale(alpha: float, x: VectorSlice) -> VectorSlice:
    """``alpha * x`` on one rank; no communication."""
    return VectorSlice(x.rank, x.col_ids, alpha * x.values)


def _check_mode(mode: str) -> None:
    if mode not in VALID_MODES:
        msg = f"Unknown mode `{mode}`, expected one of {VALID_MODES}"
        raise InputValidationError(msg)


def _require_enough_nonzeros(nnz: int, P: int) -> None:
    if nnz < P:
        msg = (
            f"Nonzero partitioning needs at least one nonzero per rank:"
            f" Z={nnz} < P={P}"
        )
        raise UnsupportedConfigurationError(msg)


def matrix_loader(
    source: MatrixSource,
    P: int,
    mode: Mode,
) -> Callable[[int], LocalMatrix]:
    """Return a function that produces the local matrix of a rank.

    An in-memory matrix is sliced; a triple stream file is read span by span
    so that each rank only touches its own records.
    """
    _check_mode(mode)
    if isinstance(source, CooMatrix):
        if mode == "nzp":
            _require_enough_nonzeros(source.nnz, P)

        def load_matrix(rank: int) -> LocalMatrix:
            return local_matrix(source, P, rank, mode)

        return load_matrix

    header = read_header(source)
    if mode == "nzp":
        _require_enough_nonzeros(header.nnz, P)
    read = read_span if mode == "nzp" else read_column_span

    def load_file(rank: int) -> LocalMatrix:
        csc, span = read(source, rank, P)
        return LocalMatrix(rank, P, span, csc, header.n)

    return load_file


def simulate(
    source: MatrixSource,
    P: int,
    mode: Mode,
    program: Callable[[RankEngine], T],
    *,
    harness: Harness | None = None,
) -> list[T]:
    """Load the local matrices, build the engines and run `program` on every rank.

    Returns the per-rank results in rank order.
    """
    load = matrix_loader(source, P, mode)

    def rank_program(endpoint: RankEndpoint) -> T:
        local = load(endpoint.rank)
        with endpoint.section("setup"):
            engine = build_engine(endpoint, local, mode)
        return program(engine)

    return run_ranks(P, rank_program, harness=harness)


def distributed_spmv(
    A: CooMatrix,
    x: DenseVector,
    P: int,
    mode: Mode = "nzp",
) -> list[ReplicatedVector]:
    """``A x`` on P ranks; one result per rank."""
    vec = _check_length(x, A.n, "x")
    return simulate(A, P, mode, lambda engine: engine.spmv(engine.local_slice(vec)))


def distributed_spvtm(
    A: CooMatrix,
    v: ReplicatedVector,
    P: int,
    mode: Mode = "nzp",
) -> OverlappedVector:
    """``v^T A`` on P ranks, as an overlapped vector."""
    vec = _check_length(v, A.m, "v")
    slices = simulate(A, P, mode, lambda engine: engine.spvtm(vec))
    return OverlappedVector.from_slices(A.n, slices)


class VerifyReport(NamedTuple):
    """Largest scaled errors of one distributed SpMV and SpVTM."""

    spmv_error: float
    spvtm_error: float
    replicas_identical: bool
    tolerance: float = VERIFY_TOLERANCE

    @property
    def ok(self) -> bool:
        """Whether both products are within tolerance on every rank."""
        return (
            self.replicas_identical
            and self.spmv_error <= self.tolerance
            and self.spvtm_error <= self.tolerance
        )


def verify_products(
    A: CooMatrix,
    P: int,
    mode: Mode = "nzp",
    seed: int = 0,
) -> VerifyReport:
    """Compare one distributed SpMV and SpVTM with the dense oracle."""
    x, v = wrap_vectors(seed, 0, A.m, A.n)
    oracle = dense_oracle(A)
    ys = distributed_spmv(A, x, P, mode)
    identical = all(y.tobytes() == ys[0].tobytes() for y in ys)
    spmv_error = max_scaled_error(ys[0], oracle.spmv(x), spmv_scale(A, x))
    try:
        u = gather_vector(distributed_spvtm(A, v, P, mode))
    except ConsistencyError:
        LOGGER.exception("replicas of an overlap column differ")
        return VerifyReport(spmv_error, math.inf, replicas_identical=False)
    spvtm_error = max_scaled_error(u, oracle.spvtm(v), spvtm_scale(A, v))
    return VerifyReport(spmv_error, spvtm_error, identical)


def wrap_vectors(seed: int, wrap: int, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """The benchmark inputs ``(x, v)`` of one wrap, uniform on [-1, 1]."""
    rng = np.random.default_rng([seed, wrap])
    return rng.uniform(-1.0, 1.0, size=n), rng.uniform(-1.0, 1.0, size=m)


class WrapReport(NamedTuple):
    """What one rank did during `run_wraps`."""

    rank: int
    wraps: int
    elapsed_seconds: float
    spmv_calls: int
    spvtm_calls: int
    rounds: int
    scalars_sent: int
    nnz: int
    setup_rounds: int
    zones: tuple[OverlapZone, ...]


def run_wraps(engine: RankEngine, count: int, seed: int = 0) -> WrapReport:
    """Perform `count` SpMV-SpVTM pairs on freshly drawn vectors."""
    if count < 0:
        msg = f"The number of wraps must be nonnegative, got {count}"
        raise InputValidationError(msg)
    endpoint = engine.endpoint
    before = endpoint.traffic.copy()
    spmv_before, spvtm_before = engine.spmv_calls, engine.spvtm_calls
    start = time.perf_counter()
    with endpoint.section(WRAPS_SECTION):
        for wrap in range(count):
            x, v = wrap_vectors(seed, wrap, engine.m, engine.n)
            engine.spmv(engine.local_slice(x))
            engine.spvtm(v)
    elapsed = time.perf_counter() - start
    spent = endpoint.traffic - before
    return WrapReport(
        engine.rank,
        count,
        elapsed,
        engine.spmv_calls - spmv_before,
        engine.spvtm_calls - spvtm_before,
        spent.rounds,
        spent.scalars_sent,
        engine.local.csc.nnz,
        engine.setup_rounds,
        tuple(engine.zones),
    )


class RunReport(NamedTuple):
    """Aggregated result of a benchmark run over all ranks.

    ``zone_phases`` is the number of distinct zone parities present (0, 1 or 2),
    not a count of reduction phases executed during the wraps.
    """

    mode: Mode
    P: int
    wraps: int
    elapsed_seconds: float
    setup_rounds: int
    spmv_allreduces: int
    spmv_scalars: int
    zone_scalars_reduced: int
    zone_phases: int
    zones: int
    imbalance: ImbalanceReport
    ranks: tuple[WrapReport, ...]

    def csv_row(self) -> dict[str, object]:
        """The row written by ``nzpart run``."""
        return {
            "mode": self.mode,
            "P": self.P,
            "wraps": self.wraps,
            "elapsed_seconds": f"{self.elapsed_seconds:.6f}",
            "setup_rounds": self.setup_rounds,
            "spmv_allreduces": self.spmv_allreduces,
            "zone_scalars_reduced": self.zone_scalars_reduced,
            "max_nnz_per_rank": self.imbalance.max_nnz,
            "min_nnz_per_rank": self.imbalance.min_nnz,
            "delta_percent": f"{self.imbalance.percent:.4f}",
        }


def run_benchmark(
    source: MatrixSource,
    P: int,
    mode: Mode = "nzp",
    wraps: int = DEFAULT_WRAPS,
    seed: int = 0,
) -> RunReport:
    """Set up the engines on P ranks and time `wraps` SpMV-SpVTM pairs."""
    harness = Harness(P)
    reports = simulate(
        source,
        P,
        mode,
        lambda engine: run_wraps(engine, wraps, seed),
        harness=harness,
    )
    in_wraps = [r for r in harness.records if r.label == WRAPS_SECTION]
    spmv_records = [
        r
        for r in in_wraps
        if r.kind == "allreduce" and r.context == WORLD_CONTEXT and r.size == P
    ]
    zone_records = [r for r in in_wraps if r.context.startswith(ZONE_CONTEXT)]
    zones = {z for report in reports for z in report.zones}
    report = RunReport(
        mode,
        P,
        wraps,
        max(r.elapsed_seconds for r in reports),
        max(r.setup_rounds for r in reports),
        len(spmv_records),
        sum(r.scalars for r in spmv_records),
        sum(r.scalars for r in zone_records),
        len({z.parity for z in zones}),
        len(zones),
        imbalance([r.nnz for r in reports]),
        tuple(reports),
    )
    LOGGER.info(
        "%s run on %d ranks: %d wraps in %.3fs, %d zones",
        mode,
        P,
        wraps,
        report.elapsed_seconds,
        report.zones,
    )
    return report
