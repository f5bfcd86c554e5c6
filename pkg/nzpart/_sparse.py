"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Sparse matrix and dense vector types, local multiply kernels and a dense
brute-force oracle.

Indices are 0-based throughout. Matrices are stored column-major: triples are
ordered by ``(col, row)`` and the kernels accumulate in that order, so results
are bit-reproducible from run to run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterator, NamedTuple, Sequence

import numpy as np

from nzpart.utils import InputValidationError

if TYPE_CHECKING:
    from numpy.typing import ArrayLike

DenseVector = np.ndarray
INDEX_DTYPE = np.int64
VALUE_DTYPE = np.float64


class Triple(NamedTuple):
    """One nonzero of a matrix."""

    row: int
    col: int
    value: float


def _frozen(array: ArrayLike, dtype: type) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True).reshape(-1)
    out.flags.writeable = False
    return out


def first_unsorted(rows: np.ndarray, cols: np.ndarray) -> int | None:
    """Index of the first entry not strictly after its predecessor in ``(col, row)`` order."""
    if len(rows) < 2:  # noqa: PLR2004
        return None
    dc = cols[1:] - cols[:-1]
    bad = (dc < 0) | ((dc == 0) & (rows[1:] <= rows[:-1]))
    hits = np.flatnonzero(bad)
    if len(hits) == 0:
        return None
    return int(hits[0]) + 1


@dataclass(frozen=True, eq=False)
class CooMatrix:
    """A global sparse matrix as triples sorted by ``(col, row)``."""

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        """Freeze the arrays and check the ordering and bounds invariants."""
        rows = _frozen(self.rows, INDEX_DTYPE)
        cols = _frozen(self.cols, INDEX_DTYPE)
        values = _frozen(self.values, VALUE_DTYPE)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        if self.m < 0 or self.n < 0:
            msg = f"Matrix dimensions must be nonnegative, got {self.m}x{self.n}"
            raise InputValidationError(msg)
        if not len(rows) == len(cols) == len(values):
            msg = "rows, cols and values must have the same length"
            raise InputValidationError(msg)
        if len(rows):
            if rows.min() < 0 or rows.max() >= self.m:
                msg = f"Row index out of range for m={self.m}"
                raise InputValidationError(msg)
            if cols.min() < 0 or cols.max() >= self.n:
                msg = f"Column index out of range for n={self.n}"
                raise InputValidationError(msg)
        bad = first_unsorted(rows, cols)
        if bad is not None:
            msg = (
                f"Triples must be strictly increasing in (col, row) order;"
                f" entry {bad} is ({rows[bad]}, {cols[bad]})"
            )
            raise InputValidationError(msg)

    @classmethod
    def from_triples(
        cls,
        m: int,
        n: int,
        triples: Sequence[Triple | tuple[int, int, float]],
    ) -> CooMatrix:
        """Build a matrix from already sorted ``(row, col, value)`` triples."""
        if len(triples) == 0:
            return cls.empty(m, n)
        rows, cols, values = zip(*triples)
        return cls(m, n, np.asarray(rows), np.asarray(cols), np.asarray(values))

    @classmethod
    def empty(cls, m: int, n: int) -> CooMatrix:
        """A matrix without nonzeros."""
        return cls(m, n, np.empty(0), np.empty(0), np.empty(0))

    @property
    def nnz(self) -> int:
        """Number of stored triples, Z."""
        return len(self.values)

    def triples(self) -> Iterator[Triple]:
        """Iterate over the stored triples in storage order."""
        for r, c, v in zip(self.rows, self.cols, self.values):
            yield Triple(int(r), int(c), float(v))

    def column_counts(self) -> np.ndarray:
        """Number of nonzeros in each of the `n` columns."""
        return np.bincount(self.cols, minlength=self.n)

    def row_counts(self) -> np.ndarray:
        """Number of nonzeros in each of the `m` rows."""
        return np.bincount(self.rows, minlength=self.m)

    def transposed(self) -> CooMatrix:
        """Swap the roles of rows and columns.

        A tall matrix becomes a wide one, so ``A @ x`` on the tall matrix is
        the SpVTM of ``x`` with the transposed (wide) matrix.
        """
        order = np.lexsort((self.cols, self.rows))
        return CooMatrix(
            self.n,
            self.m,
            self.cols[order],
            self.rows[order],
            self.values[order],
        )

    def __eq__(self, other: object) -> bool:
        """Bit-exact equality of shape and triples."""
        if not isinstance(other, CooMatrix):
            return NotImplemented
        return (
            self.m == other.m
            and self.n == other.n
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class CscMatrix:
    """A local matrix in compressed sparse column form.

    `col_ids` maps each local column to its global column index.
    """

    m: int
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray
    col_ids: np.ndarray

    def __post_init__(self) -> None:
        """Freeze the arrays and check the CSC invariants."""
        for name, dtype in (
            ("col_ptr", INDEX_DTYPE),
            ("row_idx", INDEX_DTYPE),
            ("values", VALUE_DTYPE),
            ("col_ids", INDEX_DTYPE),
        ):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        col_ptr = self.col_ptr
        if len(col_ptr) != len(self.col_ids) + 1:
            msg = "col_ptr must have n_local + 1 entries"
            raise InputValidationError(msg)
        if col_ptr[0] != 0 or col_ptr[-1] != len(self.row_idx):
            msg = "col_ptr must start at 0 and end at Z_local"
            raise InputValidationError(msg)
        if np.any(np.diff(col_ptr) < 0):
            msg = "col_ptr must be nondecreasing"
            raise InputValidationError(msg)
        if np.any(np.diff(self.col_ids) <= 0):
            msg = "col_ids must be strictly increasing"
            raise InputValidationError(msg)
        if len(self.row_idx) != len(self.values):
            msg = "row_idx and values must have the same length"
            raise InputValidationError(msg)
        if first_unsorted(self.row_idx, self._local_cols()) is not None:
            msg = "row indices must be strictly increasing within each column"
            raise InputValidationError(msg)

    def _local_cols(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_local), np.diff(self.col_ptr))

    @property
    def n_local(self) -> int:
        """Number of local columns."""
        return len(self.col_ids)

    @property
    def nnz(self) -> int:
        """Number of stored entries, Z_local."""
        return len(self.values)

    def column_counts(self) -> np.ndarray:
        """Number of entries per local column."""
        return np.diff(self.col_ptr)

    def triples(self) -> Iterator[Triple]:
        """Iterate over the entries as global triples in storage order."""
        global_cols = self.col_ids[self._local_cols()]
        for r, c, v in zip(self.row_idx, global_cols, self.values):
            yield Triple(int(r), int(c), float(v))


def csc_from_arrays(
    m: int,
    rows: np.ndarray,
    cols: np.ndarray,
    values: np.ndarray,
) -> CscMatrix:
    """Compress column-sorted triple arrays into a `CscMatrix`."""
    col_ids, counts = np.unique(cols, return_counts=True)
    col_ptr = np.zeros(len(col_ids) + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=col_ptr[1:])
    return CscMatrix(m, col_ptr, rows, values, col_ids)


def coo_to_csc(A: CooMatrix, span: tuple[int, int] | None = None) -> CscMatrix:
    """Materialize the local matrix of the triples ``A[start:stop]``.

    Parameters
    ----------
    A
        The global matrix.
    span
        Half-open ``(start, stop)`` range into the triples; all of them if None.

    """
    start, stop = (0, A.nnz) if span is None else span
    if not 0 <= start <= stop <= A.nnz:
        msg = f"Triple range [{start}, {stop}) is not within [0, {A.nnz}]"
        raise InputValidationError(msg)
    return csc_from_arrays(
        A.m,
        A.rows[start:stop],
        A.cols[start:stop],
        A.values[start:stop],
    )


def _as_vector(x: ArrayLike, length: int, what: str) -> np.ndarray:
    vec = np.asarray(x, dtype=VALUE_DTYPE).reshape(-1)
    if len(vec) != length:
        msg = f"{what} has length {len(vec)}, expected {length}"
        raise InputValidationError(msg)
    return vec


def local_spmv(A_local: CscMatrix, x_local: ArrayLike) -> DenseVector:
    """Compute ``y = A_local @ x_local``, a dense vector of length m."""
    x = _as_vector(x_local, A_local.n_local, "x_local")
    if A_local.nnz == 0:
        return np.zeros(A_local.m, dtype=VALUE_DTYPE)
    products = A_local.values * np.repeat(x, A_local.column_counts())
    return np.bincount(A_local.row_idx, weights=products, minlength=A_local.m)


def local_spvtm(v: ArrayLike, A_local: CscMatrix) -> DenseVector:
    """Compute ``u = v^T A_local``, one coefficient per local column."""
    vec = _as_vector(v, A_local.m, "v")
    if A_local.nnz == 0:
        return np.zeros(A_local.n_local, dtype=VALUE_DTYPE)
    products = A_local.values * vec[A_local.row_idx]
    return np.bincount(
        A_local._local_cols(),
        weights=products,
        minlength=A_local.n_local,
    )


class DenseOracle(NamedTuple):
    """Reference products of a matrix."""

    spmv: Callable[[ArrayLike], DenseVector]
    spvtm: Callable[[ArrayLike], DenseVector]


def dense_oracle(A: CooMatrix) -> DenseOracle:
    """Reference SpMV and SpVTM by direct accumulation in ``(col, row)`` order."""

    def spmv(x: ArrayLike) -> DenseVector:
        xv = _as_vector(x, A.n, "x")
        y = np.zeros(A.m, dtype=VALUE_DTYPE)
        np.add.at(y, A.rows, A.values * xv[A.cols])
        return y

    def spvtm(v: ArrayLike) -> DenseVector:
        vv = _as_vector(v, A.m, "v")
        u = np.zeros(A.n, dtype=VALUE_DTYPE)
        np.add.at(u, A.cols, A.values * vv[A.rows])
        return u

    return DenseOracle(spmv, spvtm)


def spmv_scale(A: CooMatrix, x: ArrayLike) -> DenseVector:
    """Row-wise ``sum |a_rj x_j|``, the scale for SpMV error checks."""
    return dense_oracle(
        CooMatrix(A.m, A.n, A.rows, A.cols, np.abs(A.values)),
    ).spmv(np.abs(np.asarray(x, dtype=VALUE_DTYPE)))


def spvtm_scale(A: CooMatrix, v: ArrayLike) -> DenseVector:
    """Column-wise ``sum |v_r a_rj|``, the scale for SpVTM error checks."""
    return dense_oracle(
        CooMatrix(A.m, A.n, A.rows, A.cols, np.abs(A.values)),
    ).spvtm(np.abs(np.asarray(v, dtype=VALUE_DTYPE)))


def max_scaled_error(
    result: ArrayLike,
    reference: ArrayLike,
    scale: ArrayLike,
) -> float:
    """Largest ``|result - reference|`` relative to `scale` (absolute where scale is 0)."""
    res = np.asarray(result, dtype=VALUE_DTYPE)
    ref = np.asarray(reference, dtype=VALUE_DTYPE)
    if res.shape != ref.shape:
        msg = f"Shapes differ: {res.shape} vs {ref.shape}"
        raise InputValidationError(msg)
    if res.size == 0:
        return 0.0
    sc = np.asarray(scale, dtype=VALUE_DTYPE)
    denom = np.where(sc > 0, sc, 1.0)
    return float(np.max(np.abs(res - ref) / denom))
