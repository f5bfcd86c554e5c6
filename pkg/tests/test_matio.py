"""Tests for the matrix file formats."""

from __future__ import annotations

import io
import textwrap
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nzpart._matgen import worked_example_matrix
from nzpart._matio import (
    HEADER_SIZE,
    RECORD_SIZE,
    TripleStreamHeader,
    import_matrix_market,
    read_column_span,
    read_header,
    read_span,
    read_triple_stream,
    read_triple_text,
    write_triple_stream,
    write_triple_text,
)
from nzpart._sparse import CooMatrix, coo_to_csc
from nzpart.utils import FormatError, InputValidationError

from .helpers import REPO_ROOT, random_matrix


def _worked_example_bytes() -> bytes:
    buffer = io.BytesIO()
    write_triple_stream(worked_example_matrix(np.arange(1.0, 22.0)), buffer)
    return buffer.getvalue()


def test_triple_stream_layout_and_roundtrip(tmp_path: Path) -> None:
    A = worked_example_matrix(np.arange(1.0, 22.0))
    data = _worked_example_bytes()
    assert len(data) == HEADER_SIZE + 21 * RECORD_SIZE
    assert data[:8] == b"NZPCOO01"
    assert read_triple_stream(io.BytesIO(data)) == A

    path = tmp_path / "example.nzp"
    write_triple_stream(A, path)
    assert read_header(path) == TripleStreamHeader(5, 8, 21)
    assert read_triple_stream(path) == A


def test_read_span_reads_the_chunk(tmp_path: Path) -> None:
    A = worked_example_matrix(np.arange(1.0, 22.0))
    path = tmp_path / "example.nzp"
    write_triple_stream(A, path)
    csc, span = read_span(path, 1, 7)
    assert span == (3, 6)
    assert csc.col_ids.tolist() == [1]
    assert csc.values.tolist() == [4.0, 5.0, 6.0]
    for rank in range(7):
        csc, span = read_span(path, rank, 7)
        assert list(csc.triples()) == list(coo_to_csc(A, span).triples())
    with pytest.raises(InputValidationError, match="rank 7"):
        read_span(path, 7, 7)


def test_read_column_span(tmp_path: Path) -> None:
    A = worked_example_matrix()
    path = tmp_path / "example.nzp"
    write_triple_stream(A, path)
    csc, span = read_column_span(path, 1, 3)
    assert span == (8, 18)
    assert csc.col_ids.tolist() == [3, 4, 5]
    csc, span = read_column_span(path, 2, 3)
    assert span == (18, 21)
    assert csc.col_ids.tolist() == [6, 7]


def test_bad_magic_and_truncation() -> None:
    data = bytearray(_worked_example_bytes())
    with pytest.raises(FormatError, match="Truncated header") as e:
        read_triple_stream(io.BytesIO(bytes(data[:10])))
    assert e.value.offset == 10  # noqa: PLR2004
    with pytest.raises(FormatError, match="Truncated record area"):
        read_triple_stream(io.BytesIO(bytes(data[:-5])))
    data[0:8] = b"NOTMAGIC"
    with pytest.raises(FormatError, match="Bad magic") as e:
        read_header(io.BytesIO(bytes(data)))
    assert e.value.offset == 0


def test_trailing_bytes() -> None:
    data = _worked_example_bytes() + b"\x00\x01\x02"
    end = HEADER_SIZE + 21 * RECORD_SIZE
    with pytest.raises(FormatError, match="3 trailing bytes") as e:
        read_triple_stream(io.BytesIO(data))
    assert e.value.offset == end
    with pytest.raises(FormatError, match="trailing bytes"):
        read_span(io.BytesIO(data), 0, 7)
    # a whole extra record is rejected too
    with pytest.raises(FormatError, match="24 trailing bytes"):
        read_header(io.BytesIO(_worked_example_bytes() + bytes(RECORD_SIZE)))


def test_unsorted_and_out_of_range_records() -> None:
    data = bytearray(_worked_example_bytes())
    first = slice(HEADER_SIZE, HEADER_SIZE + RECORD_SIZE)
    second = slice(HEADER_SIZE + RECORD_SIZE, HEADER_SIZE + 2 * RECORD_SIZE)
    swapped = bytearray(data)
    swapped[first], swapped[second] = data[second], data[first]
    with pytest.raises(FormatError, match="Record 1 is not in") as e:
        read_triple_stream(io.BytesIO(bytes(swapped)))
    assert e.value.offset == HEADER_SIZE + RECORD_SIZE

    # column field of record 5 set to n = 8
    col_at = HEADER_SIZE + 5 * RECORD_SIZE + 8
    data[col_at : col_at + 8] = (8).to_bytes(8, "little")
    with pytest.raises(FormatError, match="Record 5 lies outside") as e:
        read_triple_stream(io.BytesIO(bytes(data)))
    assert e.value.offset == HEADER_SIZE + 5 * RECORD_SIZE
    # a span that does not include the bad record still reads
    csc, _ = read_span(io.BytesIO(bytes(data)), 0, 7)
    assert csc.nnz == 3  # noqa: PLR2004


def test_triple_text(tmp_path: Path) -> None:
    A = worked_example_matrix(np.linspace(-1, 1, 21))
    path = tmp_path / "example.txt"
    write_triple_text(A, path)
    assert path.read_text().splitlines()[0] == "5 8 21"
    # linspace puts an exact zero in the middle
    with pytest.warns(UserWarning, match="1 explicit zero"):
        assert read_triple_text(path) == A

    with pytest.raises(FormatError, match="announces 3 records"):
        read_triple_text(io.StringIO("2 2 3\n0 0 1.0\n"))
    with pytest.raises(FormatError, match="Bad record line"):
        read_triple_text(io.StringIO("2 2 1\n0 zero 1.0\n"))
    with pytest.raises(FormatError, match="strictly increasing"):
        read_triple_text(io.StringIO("2 2 2\n1 0 1.0\n0 0 1.0\n"))
    with pytest.raises(FormatError, match="Empty"):
        read_triple_text(io.StringIO(""))


def test_import_matrix_market_sums_duplicates(tmp_path: Path) -> None:
    path = tmp_path / "small.mtx"
    path.write_text(
        textwrap.dedent(
            """\
            %%MatrixMarket matrix coordinate real general
            % duplicates are summed
            3 4 4
            1 1 1.0
            3 2 2.0
            1 1 0.5
            2 4 -1.0
            """,
        ),
    )
    A = import_matrix_market(path)
    assert A == CooMatrix.from_triples(
        3,
        4,
        [(0, 0, 1.5), (2, 1, 2.0), (1, 3, -1.0)],
    )


def test_import_matrix_market_rejects_other_kinds(tmp_path: Path) -> None:
    path = tmp_path / "sym.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 1 1.0\n",
    )
    with pytest.raises(FormatError, match="coordinate real general"):
        import_matrix_market(path)
    dense = tmp_path / "dense.mtx"
    dense.write_text("%%MatrixMarket matrix array real general\n1 1\n1.0\n")
    with pytest.raises(FormatError, match="Unsupported"):
        import_matrix_market(dense)


def test_shipped_example_matrix() -> None:
    A = import_matrix_market(REPO_ROOT / "example" / "worked_example.mtx")
    assert A == worked_example_matrix()


def test_explicit_zeros_warn(tmp_path: Path) -> None:
    values = np.arange(1.0, 22.0)
    values[[2, 7]] = 0.0
    A = worked_example_matrix(values)
    buffer = io.BytesIO()
    write_triple_stream(A, buffer)
    with pytest.warns(UserWarning, match="2 explicit zero"):
        assert read_triple_stream(io.BytesIO(buffer.getvalue())) == A

    path = tmp_path / "zero.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n2 3 2\n1 1 0.0\n2 3 4.0\n",
    )
    with pytest.warns(UserWarning, match="1 explicit zero"):
        B = import_matrix_market(path)
    assert B.values.tolist() == [0.0, 4.0]


@settings(max_examples=25, deadline=None)
@given(
    m=st.integers(10, 60),
    n=st.integers(100, 400),
    nnz=st.integers(1000, 3000),
    seed=st.integers(0, 2**32 - 1),
)
def test_triple_stream_roundtrip_large(m: int, n: int, nnz: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    positions = np.sort(rng.choice(m * n, size=min(nnz, m * n), replace=False))
    signs = rng.choice([-1.0, 1.0], size=len(positions))
    values = rng.uniform(0.5, 1.0, size=len(positions)) * signs
    A = CooMatrix(m, n, positions % m, positions // m, values)
    buffer = io.BytesIO()
    write_triple_stream(A, buffer)
    data = buffer.getvalue()
    assert len(data) == HEADER_SIZE + A.nnz * RECORD_SIZE
    assert read_header(io.BytesIO(data)) == TripleStreamHeader(m, n, A.nnz)
    assert read_triple_stream(io.BytesIO(data)) == A


def test_spans_concatenate_to_the_matrix() -> None:
    rng = np.random.default_rng(5)
    for trial in range(10):
        A = random_matrix(rng, int(rng.integers(1, 30)), int(rng.integers(1, 200)), 0.2, n_dense=1)
        buffer = io.BytesIO()
        write_triple_stream(A, buffer)
        for P in sorted({1, 2, 5, 16, A.nnz} & set(range(1, A.nnz + 1))):
            triples = []
            previous_stop = 0
            for rank in range(P):
                csc, (start, stop) = read_span(buffer, rank, P)
                assert start == previous_stop, (trial, P)
                previous_stop = stop
                triples.extend(csc.triples())
            assert previous_stop == A.nnz
            assert triples == list(A.triples()), (trial, P)
