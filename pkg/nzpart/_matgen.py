"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Synthetic test matrices.

`gen_random` draws the nonzero count of every column uniformly from an
interval ``[l, u]`` around a target density, picks distinct rows per column
and then repairs row coverage so that no row is empty. A few columns can be
made dense on purpose: such columns are what breaks column partitioning.
"""

from __future__ import annotations

import logging
import math
from typing import NamedTuple, Sequence

import numpy as np

from nzpart._sparse import CooMatrix
from nzpart.utils import InputValidationError

LOGGER = logging.getLogger(__name__)

# Rows of the 5x8 worked example, one entry per column.
WORKED_EXAMPLE_PATTERN: tuple[tuple[int, ...], ...] = (
    (0, 4),
    (0, 2, 3, 4),
    (0, 2),
    (0, 1, 2, 3, 4),
    (1,),
    (0, 1, 2, 4),
    (3,),
    (0, 2),
)


def _snap(target: float) -> float:
    nearest = round(target)
    return float(nearest) if math.isclose(target, nearest, abs_tol=1e-9) else target


class GenParams(NamedTuple):
    """Parameters of `gen_random`.

    Attributes
    ----------
    m, n
        Matrix dimensions, ``n >= m``.
    rho
        Target density as a fraction of m.
    iminus, iplus
        How far the per-column count may fall below ``floor(rho * m)`` and
        rise above ``ceil(rho * m)``.
    seed
        Seed of the random generator.
    n_dense
        Number of dense columns, placed at random positions.
    dense_density
        Fraction of m filled in each dense column.

    """

    m: int
    n: int
    rho: float
    iminus: int
    iplus: int
    seed: int = 0
    n_dense: int = 0
    dense_density: float = 0.5

    @property
    def lower(self) -> int:
        """Smallest per-column count, l."""
        return math.floor(_snap(self.rho * self.m)) - self.iminus

    @property
    def upper(self) -> int:
        """Largest per-column count, u."""
        return math.ceil(_snap(self.rho * self.m)) + self.iplus

    @property
    def dense_count(self) -> int:
        """Nonzeros in each dense column."""
        return math.ceil(_snap(self.dense_density * self.m))

    def validate(self) -> None:
        """Raise `InputValidationError` for infeasible parameters."""
        problems = []
        if self.m < 1 or self.n < self.m:
            problems.append(f"need 1 <= m <= n, got m={self.m}, n={self.n}")
        if not 0 < self.rho <= 1:
            problems.append(f"rho must be in (0, 1], got {self.rho}")
        if self.iminus < 0 or self.iplus < 0:
            problems.append("iminus and iplus must be nonnegative")
        if self.lower < 1:
            problems.append(f"l = floor(rho*m) - iminus = {self.lower} must be >= 1")
        if self.upper > self.m:
            problems.append(f"u = ceil(rho*m) + iplus = {self.upper} must be <= m")
        if self.lower > self.upper:
            problems.append(f"l = {self.lower} exceeds u = {self.upper}")
        if not 0 <= self.n_dense <= self.n:
            problems.append(f"n_dense must be in [0, n], got {self.n_dense}")
        if self.n_dense and not 0 < self.dense_density <= 1:
            problems.append(f"dense_density must be in (0, 1], got {self.dense_density}")
        if not problems:
            least = (self.n - self.n_dense) * self.lower + self.n_dense * self.dense_count
            if least < self.m:
                problems.append(f"{least} nonzeros cannot cover {self.m} rows")
        if problems:
            msg = "Invalid generator parameters: " + "; ".join(problems)
            raise InputValidationError(msg)


def _cover_rows(
    columns: list[np.ndarray],
    counts: np.ndarray,
    m: int,
) -> None:
    """Swap uncovered rows into the largest columns, keeping every column count."""
    covered = np.bincount(np.concatenate(columns), minlength=m)
    uncovered = np.flatnonzero(covered == 0)
    if not len(uncovered):
        return
    order = np.argsort(-counts, kind="stable")
    cursor = 0
    for row in uncovered:
        # A column without multiply covered rows never gets one again.
        while True:
            col = order[cursor]
            rows = columns[col]
            spare = np.flatnonzero(covered[rows] > 1)
            if len(spare):
                break
            cursor += 1
        victim = rows[spare[0]]
        covered[victim] -= 1
        covered[row] += 1
        rows[spare[0]] = row
        rows.sort()
    LOGGER.debug("repaired coverage of %d rows", len(uncovered))


def gen_random(params: GenParams) -> CooMatrix:
    """Generate a random m x n matrix with bounded column counts and no empty row.

    Values are uniform on [-1, 1]; exact zeros are redrawn.
    """
    params.validate()
    m, n = params.m, params.n
    rng = np.random.default_rng(params.seed)
    counts = rng.integers(params.lower, params.upper + 1, size=n)
    if params.n_dense:
        dense = rng.choice(n, size=params.n_dense, replace=False)
        counts[dense] = params.dense_count
    columns = [np.sort(rng.choice(m, size=int(c), replace=False)) for c in counts]
    _cover_rows(columns, counts, m)
    rows = np.concatenate(columns)
    values = rng.uniform(-1.0, 1.0, size=len(rows))
    zeros = values == 0
    while zeros.any():
        values[zeros] = rng.uniform(-1.0, 1.0, size=int(zeros.sum()))
        zeros = values == 0
    cols = np.repeat(np.arange(n), counts)
    return CooMatrix(m, n, rows, cols, values)


def descending_column_order(A: CooMatrix) -> np.ndarray:
    """Old column index of each new column, densest first, ties by index."""
    return np.argsort(-A.column_counts(), kind="stable")


def sort_columns_descending(A: CooMatrix) -> CooMatrix:
    """Permute the columns into nonincreasing nonzero count."""
    order = descending_column_order(A)
    new_index = np.empty(A.n, dtype=np.int64)
    new_index[order] = np.arange(A.n)
    cols = new_index[A.cols]
    perm = np.lexsort((A.rows, cols))
    return CooMatrix(A.m, A.n, A.rows[perm], cols[perm], A.values[perm])


def worked_example_matrix(values: Sequence[float] | None = None) -> CooMatrix:
    """The 5x8 worked example with 21 nonzeros.

    `values` are given in storage order; all ones by default.
    """
    rows = [r for col in WORKED_EXAMPLE_PATTERN for r in col]
    cols = [c for c, col in enumerate(WORKED_EXAMPLE_PATTERN) for _ in col]
    data = np.ones(len(rows)) if values is None else np.asarray(values, dtype=float)
    if len(data) != len(rows):
        msg = f"The worked example has {len(rows)} nonzeros, got {len(data)} values"
        raise InputValidationError(msg)
    return CooMatrix(5, 8, rows, cols, data)
