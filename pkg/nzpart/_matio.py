"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Matrix file formats and per-rank span reads.

The triple stream is a 32 byte header (the tag ``NZPCOO01`` followed by m, n
and Z as little-endian unsigned 64-bit integers) and Z fixed-width 24 byte
records ``(row, col, value)`` in ``(col, row)`` order. The fixed record size
lets each rank seek straight to its chunk.
"""

from __future__ import annotations

import io
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import IO, TYPE_CHECKING, Iterator, NamedTuple, Union

import numpy as np
import scipy.io
import scipy.sparse

from nzpart._partition import chunk_bounds, column_ranges
from nzpart._sparse import CooMatrix, CscMatrix, csc_from_arrays, first_unsorted
from nzpart.utils import FormatError, InputValidationError, warn

if TYPE_CHECKING:
    from nzpart._sparse import Triple

LOGGER = logging.getLogger(__name__)

MAGIC = b"NZPCOO01"
HEADER_DTYPE = np.dtype(
    [("magic", "S8"), ("m", "<u8"), ("n", "<u8"), ("nnz", "<u8")],
)
RECORD_DTYPE = np.dtype([("row", "<u8"), ("col", "<u8"), ("value", "<f8")])
HEADER_SIZE = HEADER_DTYPE.itemsize
RECORD_SIZE = RECORD_DTYPE.itemsize

Source = Union[str, Path, IO[bytes]]


class TripleStreamHeader(NamedTuple):
    """Header of a triple stream file."""

    m: int
    n: int
    nnz: int


@contextmanager
def _open_binary(source: Source, mode: str = "rb") -> Iterator[IO[bytes]]:
    if isinstance(source, (str, Path)):
        with open(source, mode) as f:  # noqa: PTH123
            yield f
    else:
        yield source


def _record_offset(index: int) -> int:
    return HEADER_SIZE + index * RECORD_SIZE


def write_triple_stream(A: CooMatrix, sink: Source) -> None:
    """Write `A` as a binary triple stream."""
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["m"], header["n"], header["nnz"] = A.m, A.n, A.nnz
    records = np.empty(A.nnz, dtype=RECORD_DTYPE)
    records["row"] = A.rows
    records["col"] = A.cols
    records["value"] = A.values
    with _open_binary(sink, "wb") as f:
        f.write(header.tobytes())
        f.write(records.tobytes())


def _read_header(f: IO[bytes]) -> TripleStreamHeader:
    f.seek(0)
    raw = f.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        msg = f"Truncated header: {len(raw)} of {HEADER_SIZE} bytes"
        raise FormatError(msg, offset=len(raw))
    header = np.frombuffer(raw, dtype=HEADER_DTYPE)[0]
    if bytes(header["magic"]) != MAGIC:
        msg = f"Bad magic {bytes(header['magic'])!r}, expected {MAGIC!r}"
        raise FormatError(msg, offset=0)
    parsed = TripleStreamHeader(int(header["m"]), int(header["n"]), int(header["nnz"]))
    end = _record_offset(parsed.nnz)
    size = f.seek(0, io.SEEK_END)
    if size > end:
        msg = f"{size - end} trailing bytes after {parsed.nnz} records"
        raise FormatError(msg, offset=end)
    return parsed


def read_header(source: Source) -> TripleStreamHeader:
    """Read only the header of a triple stream."""
    with _open_binary(source) as f:
        return _read_header(f)


def _read_records(
    f: IO[bytes],
    header: TripleStreamHeader,
    start: int,
    stop: int,
) -> np.ndarray:
    f.seek(_record_offset(start))
    want = (stop - start) * RECORD_SIZE
    raw = f.read(want)
    if len(raw) < want:
        msg = f"Truncated record area: expected {header.nnz} records"
        raise FormatError(msg, offset=_record_offset(start) + len(raw))
    records = np.frombuffer(raw, dtype=RECORD_DTYPE)
    rows = records["row"].astype(np.int64)
    cols = records["col"].astype(np.int64)
    out_of_range = np.flatnonzero(
        (records["row"] >= header.m) | (records["col"] >= header.n),
    )
    if len(out_of_range):
        bad = int(out_of_range[0])
        msg = f"Record {start + bad} lies outside the {header.m}x{header.n} matrix"
        raise FormatError(msg, offset=_record_offset(start + bad))
    bad = first_unsorted(rows, cols)
    if bad is not None:
        msg = f"Record {start + bad} is not in (col, row) order"
        raise FormatError(msg, offset=_record_offset(start + bad))
    return records


def _warn_explicit_zeros(values: np.ndarray) -> None:
    zeros = int(np.count_nonzero(values == 0))
    if zeros:
        warn(f"{zeros} explicit zero value(s) are stored as nonzeros")


def read_triple_stream(source: Source) -> CooMatrix:
    """Read a whole triple stream."""
    with _open_binary(source) as f:
        header = _read_header(f)
        records = _read_records(f, header, 0, header.nnz)
    _warn_explicit_zeros(records["value"])
    return CooMatrix(
        header.m,
        header.n,
        records["row"],
        records["col"],
        records["value"],
    )


def _span_csc(records: np.ndarray, m: int) -> CscMatrix:
    return csc_from_arrays(
        m,
        records["row"].astype(np.int64),
        records["col"].astype(np.int64),
        records["value"],
    )


def read_span(source: Source, rank: int, P: int) -> tuple[CscMatrix, tuple[int, int]]:
    """Read the contiguous nonzero chunk of `rank` out of `P`.

    Only the chunk's byte range of the record area is read.

    Returns
    -------
    The local matrix and its half-open global triple range.

    """
    if not 0 <= rank < P:
        msg = f"rank {rank} is not in [0, {P})"
        raise InputValidationError(msg)
    with _open_binary(source) as f:
        header = _read_header(f)
        bounds = chunk_bounds(header.nnz, P)
        start, stop = bounds.span(rank)
        records = _read_records(f, header, start, stop)
    LOGGER.debug("rank %d read triples [%d, %d)", rank, start, stop)
    return _span_csc(records, header.m), (start, stop)


def _lower_bound_col(f: IO[bytes], header: TripleStreamHeader, col: int) -> int:
    """Index of the first record whose column is at least `col`."""
    lo, hi = 0, header.nnz
    while lo < hi:
        mid = (lo + hi) // 2
        f.seek(_record_offset(mid) + RECORD_DTYPE.fields["col"][1])
        raw = f.read(8)
        if len(raw) < 8:  # noqa: PLR2004
            msg = "Truncated record area"
            raise FormatError(msg, offset=_record_offset(mid))
        if int.from_bytes(raw, "little") < col:
            lo = mid + 1
        else:
            hi = mid
    return lo


def read_column_span(
    source: Source,
    rank: int,
    P: int,
) -> tuple[CscMatrix, tuple[int, int]]:
    """Read the contiguous column range of `rank` out of `P` (column partitioning).

    The triple range is located by binary search over the sorted records.
    """
    if not 0 <= rank < P:
        msg = f"rank {rank} is not in [0, {P})"
        raise InputValidationError(msg)
    with _open_binary(source) as f:
        header = _read_header(f)
        col_lo, col_hi = column_ranges(header.n, P)[rank]
        start = _lower_bound_col(f, header, col_lo)
        stop = _lower_bound_col(f, header, col_hi)
        records = _read_records(f, header, start, stop)
    return _span_csc(records, header.m), (start, stop)


def write_triple_text(A: CooMatrix, sink: str | Path | IO[str]) -> None:
    """Write the debugging text variant: an ``m n Z`` line, then ``row col value`` lines."""
    lines = [f"{A.m} {A.n} {A.nnz}"]
    lines.extend(f"{t.row} {t.col} {t.value!r}" for t in A.triples())
    text = "\n".join(lines) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text)
    else:
        sink.write(text)


def read_triple_text(source: str | Path | IO[str]) -> CooMatrix:
    """Read the debugging text variant written by `write_triple_text`."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        msg = "Empty text matrix"
        raise FormatError(msg, offset=0)
    try:
        m, n, nnz = (int(tok) for tok in lines[0].split())
    except ValueError as e:
        msg = f"Bad header line {lines[0]!r}"
        raise FormatError(msg, offset=1) from e
    if len(lines) - 1 != nnz:
        msg = f"Header announces {nnz} records, found {len(lines) - 1}"
        raise FormatError(msg, offset=len(lines))
    triples: list[Triple | tuple[int, int, float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            r, c, v = line.split()
            triples.append((int(r), int(c), float(v)))
        except ValueError as e:
            msg = f"Bad record line {line!r}"
            raise FormatError(msg, offset=lineno) from e
    try:
        A = CooMatrix.from_triples(m, n, triples)
    except InputValidationError as e:
        raise FormatError(str(e)) from e
    _warn_explicit_zeros(A.values)
    return A


def import_matrix_market(source: Source) -> CooMatrix:
    """Read a coordinate real general Matrix Market file.

    Duplicate entries are summed and the result is sorted by ``(col, row)``.
    """
    with _open_binary(source) as f:
        data = f.read()
    try:
        rows, cols, _, fmt, field, symmetry = scipy.io.mminfo(io.BytesIO(data))
    except ValueError as e:
        msg = f"Not a Matrix Market file: {e}"
        raise FormatError(msg, offset=0) from e
    if fmt != "coordinate" or field not in ("real", "integer") or symmetry != "general":
        msg = (
            f"Unsupported Matrix Market header `{fmt} {field} {symmetry}`,"
            " only `coordinate real general` is supported"
        )
        raise FormatError(msg, offset=0)
    csc = scipy.sparse.csc_matrix(scipy.io.mmread(io.BytesIO(data)), dtype=np.float64)
    csc.sum_duplicates()
    col_of_entry = np.repeat(np.arange(csc.shape[1]), np.diff(csc.indptr))
    _warn_explicit_zeros(csc.data)
    return CooMatrix(rows, cols, csc.indices, col_of_entry, csc.data)
