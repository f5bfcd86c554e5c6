"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Nonzero chunking, covers, the sequential overlap-zone oracle, the column
partition baseline and the imbalance metric.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, NamedTuple, Sequence

import numpy as np

from nzpart._sparse import CooMatrix, CscMatrix, coo_to_csc
from nzpart.definitions import Parity, parity_of
from nzpart.utils import InputValidationError, UnsupportedConfigurationError

if TYPE_CHECKING:
    from nzpart.definitions import Mode


class ChunkBounds(NamedTuple):
    """Offsets of the P contiguous nonzero chunks."""

    P: int
    offsets: tuple[int, ...]

    def span(self, rank: int) -> tuple[int, int]:
        """Half-open triple range of `rank`."""
        return self.offsets[rank], self.offsets[rank + 1]

    def sizes(self) -> list[int]:
        """Number of triples per rank."""
        return [b - a for a, b in zip(self.offsets, self.offsets[1:])]


def chunk_bounds(Z: int, P: int) -> ChunkBounds:
    """Split Z nonzeros into P chunks whose sizes differ by at most one.

    The first ``Z mod P`` chunks get ``ceil(Z / P)`` nonzeros, the rest
    ``floor(Z / P)``.
    """
    if P < 1:
        msg = f"The number of ranks must be at least 1, got {P}"
        raise InputValidationError(msg)
    if Z < 0:
        msg = f"The number of nonzeros must be nonnegative, got {Z}"
        raise InputValidationError(msg)
    base, extra = divmod(Z, P)
    offsets = [0]
    for i in range(P):
        offsets.append(offsets[-1] + base + (1 if i < extra else 0))
    return ChunkBounds(P, tuple(offsets))


class Cover(NamedTuple):
    """The column sets J_i of every rank.

    `first` and `last` hold j_f(i) and j_l(i), or None for an empty chunk.
    """

    n: int
    columns: tuple[np.ndarray, ...]
    first: tuple[int | None, ...]
    last: tuple[int | None, ...]

    @property
    def P(self) -> int:
        """Number of ranks."""
        return len(self.columns)

    def has_empty_chunks(self) -> bool:
        """Whether some rank holds no nonzeros."""
        return any(f is None for f in self.first)


def build_cover(A: CooMatrix, bounds: ChunkBounds) -> Cover:
    """Compute J_i, the columns touched by each chunk."""
    columns, first, last = [], [], []
    for rank in range(bounds.P):
        start, stop = bounds.span(rank)
        cols = A.cols[start:stop]
        columns.append(np.unique(cols))
        first.append(int(cols[0]) if len(cols) else None)
        last.append(int(cols[-1]) if len(cols) else None)
    return Cover(A.n, tuple(columns), tuple(first), tuple(last))


class OverlapZone(NamedTuple):
    """A column split across the contiguous ranks ``lo..hi``."""

    zone_rank: int
    column: int
    lo: int
    hi: int

    @property
    def members(self) -> range:
        """The member ranks."""
        return range(self.lo, self.hi + 1)

    @property
    def size(self) -> int:
        """Number of member ranks."""
        return self.hi - self.lo + 1

    @property
    def parity(self) -> Parity:
        """Scheduling parity of the zone."""
        return parity_of(self.zone_rank)


def zones_oracle(cover: Cover) -> list[OverlapZone]:
    """Sequentially find every overlap zone, numbered left to right."""
    if cover.has_empty_chunks():
        msg = "Overlap zones require every rank to hold at least one nonzero (Z >= P)"
        raise UnsupportedConfigurationError(msg)
    zones: list[OverlapZone] = []
    for i in range(cover.P - 1):
        column = cover.last[i]
        if column != cover.first[i + 1]:
            continue
        assert column is not None
        if zones and zones[-1].column == column and zones[-1].hi == i:
            zones[-1] = zones[-1]._replace(hi=i + 1)
        else:
            zones.append(OverlapZone(len(zones), column, i, i + 1))
    return zones


class LocalMatrix(NamedTuple):
    """The local matrix A_(i) of one rank, its global triple range and the global n."""

    rank: int
    P: int
    span: tuple[int, int]
    csc: CscMatrix
    n: int

    @property
    def cover(self) -> np.ndarray:
        """The global columns J_i held by this rank."""
        return self.csc.col_ids

    @property
    def j_first(self) -> int | None:
        """First column j_f, None if the chunk is empty."""
        return int(self.csc.col_ids[0]) if self.csc.n_local else None

    @property
    def j_last(self) -> int | None:
        """Last column j_l, None if the chunk is empty."""
        return int(self.csc.col_ids[-1]) if self.csc.n_local else None


def column_ranges(n: int, P: int) -> list[tuple[int, int]]:
    """Contiguous column ranges; the first ``n mod P`` ranks get one extra column."""
    if P < 1:
        msg = f"The number of ranks must be at least 1, got {P}"
        raise InputValidationError(msg)
    if P > n:
        msg = f"Column partitioning needs P <= n, got P={P} and n={n}"
        raise InputValidationError(msg)
    bounds = chunk_bounds(n, P)
    return [bounds.span(rank) for rank in range(P)]


class ColumnPartition(NamedTuple):
    """Per-rank column ranges of the column partition and what they hold."""

    ranges: list[tuple[int, int]]
    spans: list[tuple[int, int]]
    counts: list[int]

    def bounds(self) -> ChunkBounds:
        """The triple ranges as chunk bounds, e.g. for `build_cover`."""
        offsets = [start for start, _ in self.spans] + [self.spans[-1][1]]
        return ChunkBounds(len(self.spans), tuple(offsets))


def column_partition(A: CooMatrix, P: int) -> ColumnPartition:
    """Assign contiguous, near-equal column ranges to the ranks."""
    ranges = column_ranges(A.n, P)
    edges = np.searchsorted(A.cols, [lo for lo, _ in ranges] + [A.n], side="left")
    spans = [(int(a), int(b)) for a, b in zip(edges, edges[1:])]
    counts = [b - a for a, b in spans]
    return ColumnPartition(ranges, spans, counts)


def local_matrix(A: CooMatrix, P: int, rank: int, mode: Mode = "nzp") -> LocalMatrix:
    """Slice the local matrix of `rank` out of an in-memory matrix."""
    if mode == "nzp":
        span = chunk_bounds(A.nnz, P).span(rank)
    else:
        span = column_partition(A, P).spans[rank]
    return LocalMatrix(rank, P, span, coo_to_csc(A, span), A.n)


class ImbalanceReport(NamedTuple):
    """Nonzero imbalance, ``delta = P * (max - min) / Z``."""

    max_nnz: int
    min_nnz: int
    nnz: int
    P: int
    delta: float

    @property
    def percent(self) -> float:
        """Delta as a percentage."""
        return 100.0 * self.delta


def imbalance(per_rank_counts: Sequence[int]) -> ImbalanceReport:
    """Compute the imbalance of per-rank nonzero counts."""
    counts = [int(c) for c in per_rank_counts]
    if not counts:
        msg = "At least one per-rank count is required"
        raise InputValidationError(msg)
    P, Z = len(counts), sum(counts)
    hi, lo = max(counts), min(counts)
    delta = 0.0 if Z == 0 else P * (hi - lo) / Z
    return ImbalanceReport(hi, lo, Z, P, delta)
