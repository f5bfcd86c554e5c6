"""Tests for the distributed SpMV and SpVTM engines."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from nzpart._comm import Harness
from nzpart._engine import (
    OverlappedVector,
    RankEngine,
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
from nzpart._matgen import worked_example_matrix
from nzpart._matio import write_triple_stream
from nzpart._partition import build_cover, chunk_bounds, local_matrix
from nzpart._sparse import (
    CooMatrix,
    coo_to_csc,
    dense_oracle,
    local_spmv,
    local_spvtm,
    max_scaled_error,
    spmv_scale,
    spvtm_scale,
)
from nzpart.utils import (
    ConsistencyError,
    InputValidationError,
    UnsupportedConfigurationError,
)

from .helpers import random_matrix


def _worked_example_cover():  # noqa: ANN202
    return build_cover(worked_example_matrix(), chunk_bounds(21, 7))


def test_distribute_worked_example() -> None:
    xo = distribute_vector(np.arange(8.0), _worked_example_cover())
    assert xo.stored_coefficients() == 12  # noqa: PLR2004
    held = np.bincount(np.concatenate([s.col_ids for s in xo.slices]), minlength=8)
    assert held.tolist() == [1, 2, 1, 3, 1, 2, 1, 1]
    assert xo.slice(4).values.tolist() == [3.0, 4.0, 5.0]
    with pytest.raises(InputValidationError, match="length 7"):
        distribute_vector(np.ones(7), _worked_example_cover())


def test_distribute_single_rank() -> None:
    A = CooMatrix.from_triples(2, 4, [(0, 0, 1.0), (1, 2, 1.0)])
    xo = distribute_vector(np.arange(4.0), build_cover(A, chunk_bounds(2, 1)))
    assert xo.slice(0).col_ids.tolist() == [0, 2]
    # empty columns are not stored anywhere and gather as zero
    assert gather_vector(xo).tolist() == [0.0, 0.0, 2.0, 0.0]


def test_gather_inverts_distribute() -> None:
    x = np.random.default_rng(0).normal(size=8)
    assert gather_vector(distribute_vector(x, _worked_example_cover())).tobytes() == x.tobytes()


def test_gather_detects_replica_mismatch() -> None:
    xo = distribute_vector(np.ones(8), _worked_example_cover())
    broken = list(xo.slices)
    values = broken[3].values.copy()
    values[0] = 2.0
    broken[3] = VectorSlice(3, broken[3].col_ids, values)
    with pytest.raises(ConsistencyError, match="column 3 differs between rank 2"):
        gather_vector(OverlappedVector(8, tuple(broken)))
    with pytest.raises(InputValidationError, match="ranks 0..P-1"):
        OverlappedVector.from_slices(8, broken[1:])


def test_spmv_worked_example() -> None:
    A = worked_example_matrix()
    for y in distributed_spmv(A, np.ones(8), 7):
        assert y.tolist() == [6, 3, 5, 3, 4]
    for y in distributed_spmv(A, np.zeros(8), 7):
        assert y.tolist() == [0] * 5
    [y] = distributed_spmv(A, np.arange(8.0), 1)
    assert y.tobytes() == local_spmv(coo_to_csc(A), np.arange(8.0)).tobytes()


def test_spvtm_worked_example() -> None:
    A = worked_example_matrix()
    uo = distributed_spvtm(A, np.ones(5), 7)
    assert gather_vector(uo).tolist() == [2, 4, 2, 5, 1, 4, 1, 2]
    # the zone of column 1 sums the partials of ranks 0 and 1
    partials = [local_spvtm(np.ones(5), local_matrix(A, 7, r).csc) for r in (0, 1)]
    assert (partials[0][-1], partials[1][0]) == (1.0, 3.0)
    assert uo.slice(0).values[-1] == uo.slice(1).values[0] == 4.0  # noqa: PLR2004
    assert gather_vector(distributed_spvtm(A, np.zeros(5), 7)).tolist() == [0] * 8


def _traffic(A: CooMatrix, P: int, mode: str, program) -> Harness:  # noqa: ANN001
    harness = Harness(P)
    simulate(A, P, mode, program, harness=harness)  # type: ignore[arg-type]
    return harness


def test_communication_shape_worked_example() -> None:
    A = worked_example_matrix()

    def spmv(engine: RankEngine) -> None:
        with engine.endpoint.section("op"):
            engine.spmv(engine.local_slice(np.ones(8)))

    def spvtm(engine: RankEngine) -> None:
        with engine.endpoint.section("op"):
            engine.spvtm(np.zeros(5))

    ops = [r for r in _traffic(A, 7, "nzp", spmv).records if r.label == "op"]
    assert [(r.kind, r.context, r.size, r.scalars) for r in ops] == [
        ("allreduce", "world", 7, 5),
    ]
    ops = [r for r in _traffic(A, 7, "nzp", spvtm).records if r.label == "op"]
    assert sorted((r.context, r.lo, r.hi, r.scalars) for r in ops) == [
        ("zone0", 0, 1, 1),
        ("zone1", 2, 4, 1),
        ("zone2", 4, 5, 1),
    ]
    assert [r for r in _traffic(A, 7, "colp", spvtm).records if r.label == "op"] == []


def test_overlapped_dot() -> None:
    A = worked_example_matrix()
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=8), rng.normal(size=8)

    def program(engine: RankEngine) -> tuple:
        ones = engine.local_slice(np.ones(8))
        zero = engine.local_slice(np.zeros(8))
        xa, xb = engine.local_slice(a), engine.local_slice(b)
        return (
            overlapped_dot(engine, ones, ones),
            overlapped_dot(engine, zero, ones),
            overlapped_dot(engine, xa, xb),
            overlapped_norm(engine, xa),
        )

    for mode, P in (("nzp", 7), ("nzp", 1), ("colp", 3)):
        for ones, zero, ab, norm in simulate(A, P, mode, program):  # type: ignore[arg-type]
            assert ones == 8.0  # noqa: PLR2004
            assert zero == 0.0
            assert ab == pytest.approx(float(a @ b), rel=1e-12)
            assert norm == pytest.approx(float(np.linalg.norm(a)), rel=1e-12)


def test_overlapped_dot_rejects_foreign_slices() -> None:
    A = worked_example_matrix()

    def program(engine: RankEngine) -> None:
        other = VectorSlice(engine.rank, np.array([7]), np.ones(1))
        overlapped_dot(engine, other, other)

    with pytest.raises(InputValidationError, match="does not match the cover"):
        simulate(A, 7, "nzp", program)


def test_axpy_and_scale_keep_replicas_consistent() -> None:
    A = worked_example_matrix()
    x, y = np.arange(8.0), np.ones(8)

    def program(engine: RankEngine) -> VectorSlice:
        xs, ys = engine.local_slice(x), engine.local_slice(y)
        return axpy(2.0, xs, scale(3.0, ys))

    slices = simulate(A, 7, "nzp", program)
    result = gather_vector(OverlappedVector.from_slices(8, slices))
    assert result.tolist() == (2 * x + 3 * y).tolist()
    with pytest.raises(InputValidationError, match="different covers"):
        axpy(1.0, slices[0], slices[1])


def test_nzp_needs_a_nonzero_per_rank() -> None:
    with pytest.raises(UnsupportedConfigurationError, match="Z=21 < P=22"):
        distributed_spmv(worked_example_matrix(), np.ones(8), 22)
    with pytest.raises(InputValidationError, match="P <= n"):
        distributed_spmv(worked_example_matrix(), np.ones(8), 9, mode="colp")


def _products(A: CooMatrix, x: np.ndarray, v: np.ndarray, P: int, mode: str) -> tuple:
    def program(engine: RankEngine) -> tuple:
        return engine.spmv(engine.local_slice(x)), engine.spvtm(v)

    results = simulate(A, P, mode, program)  # type: ignore[arg-type]
    ys = [y for y, _ in results]
    for y in ys:
        assert y.tobytes() == ys[0].tobytes()
    u = gather_vector(OverlappedVector.from_slices(A.n, [s for _, s in results]))
    return ys[0], u


def test_oracle_equivalence_on_random_configurations() -> None:
    rng = np.random.default_rng(20240611)
    for trial in range(120):
        m = int(rng.integers(1, 65))
        n = int(rng.integers(m, 4097)) if trial % 4 == 0 else int(rng.integers(m, 200))
        density = float(rng.uniform(0.3, 3.0) / m) if n > 500 else float(rng.uniform(0.02, 0.6))  # noqa: PLR2004
        A = random_matrix(
            rng,
            m,
            n,
            min(density, 1.0),
            n_dense=int(rng.integers(0, 3)),
            n_empty=int(rng.integers(0, 6)),
        )
        choices = [1, 2, 3, 7, 16] + ([A.nnz] if A.nnz <= 200 else [])  # noqa: PLR2004
        P = min(int(rng.choice(choices)), A.nnz)
        x, v = rng.uniform(-1, 1, size=n), rng.uniform(-1, 1, size=m)
        oracle = dense_oracle(A)
        y, u = _products(A, x, v, P, "nzp")
        assert max_scaled_error(y, oracle.spmv(x), spmv_scale(A, x)) <= 1e-10, trial
        assert max_scaled_error(u, oracle.spvtm(v), spvtm_scale(A, v)) <= 1e-10, trial
        if P <= n:
            y_col, u_col = _products(A, x, v, P, "colp")
            assert max_scaled_error(y_col, y, spmv_scale(A, x)) <= 1e-12, trial
            assert max_scaled_error(u_col, u, spvtm_scale(A, v)) <= 1e-12, trial


def test_replicas_are_bit_identical_after_spvtm() -> None:
    rng = np.random.default_rng(9)
    A = random_matrix(rng, 20, 30, 0.5, n_dense=2)
    uo = distributed_spvtm(A, rng.normal(size=20), 16)
    gather_vector(uo)  # raises on any mismatch


def test_wraps_zero_and_single_rank() -> None:
    A = worked_example_matrix()
    report = run_benchmark(A, 1, "nzp", wraps=0)
    assert (report.wraps, report.spmv_allreduces, report.zone_scalars_reduced) == (0, 0, 0)
    report = run_benchmark(A, 1, "nzp", wraps=2)
    [rank] = report.ranks
    assert (rank.spmv_calls, rank.spvtm_calls) == (2, 2)
    assert (report.spmv_allreduces, report.zone_scalars_reduced, report.zones) == (2, 0, 0)
    assert report.setup_rounds == 0


def test_zone_phases_counts_parities_present() -> None:
    A = CooMatrix.from_triples(3, 1, [(0, 0, 1.0), (1, 0, 2.0), (2, 0, 3.0)])
    report = run_benchmark(A, 3, "nzp", wraps=0)
    assert (report.zones, report.zone_phases) == (1, 1)
    assert report.zone_scalars_reduced == 0


def test_wraps_worked_example() -> None:
    A = worked_example_matrix()
    report = run_benchmark(A, 7, "nzp", wraps=1)
    assert report.zone_scalars_reduced == 3  # noqa: PLR2004
    assert report.zone_phases == 2  # noqa: PLR2004
    assert report.spmv_allreduces == 1
    assert report.spmv_scalars == 5  # noqa: PLR2004
    report = run_benchmark(A, 7, "nzp", wraps=10)
    assert (report.spmv_allreduces, report.zone_scalars_reduced) == (10, 30)
    assert report.setup_rounds == 13  # noqa: PLR2004
    assert report.imbalance.delta == 0.0
    row = report.csv_row()
    assert (row["max_nnz_per_rank"], row["min_nnz_per_rank"]) == (3, 3)

    colp = run_benchmark(A, 7, "colp", wraps=10)
    assert (colp.spmv_allreduces, colp.zone_scalars_reduced, colp.zones) == (10, 0, 0)
    assert colp.imbalance.max_nnz == 6  # noqa: PLR2004


def test_run_wraps_rejects_negative_count() -> None:
    with pytest.raises(InputValidationError, match="nonnegative"):
        simulate(worked_example_matrix(), 2, "nzp", lambda engine: run_wraps(engine, -1))


def test_benchmark_from_triple_stream(tmp_path: Path) -> None:
    A = worked_example_matrix(np.linspace(-1, 1, 21))
    path = tmp_path / "example.nzp"
    write_triple_stream(A, path)
    from_file = run_benchmark(path, 7, "nzp", wraps=3, seed=1)
    in_memory = run_benchmark(A, 7, "nzp", wraps=3, seed=1)
    assert from_file.zone_scalars_reduced == in_memory.zone_scalars_reduced == 9  # noqa: PLR2004
    assert run_benchmark(path, 3, "colp", wraps=1).imbalance.nnz == 21  # noqa: PLR2004
    with pytest.raises(UnsupportedConfigurationError):
        run_benchmark(path, 30, "nzp", wraps=1)


def test_verify_products() -> None:
    A = worked_example_matrix(np.linspace(-1, 1, 21))
    for mode, P in (("nzp", 7), ("nzp", 1), ("colp", 1), ("colp", 4)):
        check = verify_products(A, P, mode)  # type: ignore[arg-type]
        assert check.ok, (mode, P)
        assert check.replicas_identical


def test_tall_matrix_through_its_transpose() -> None:
    rng = np.random.default_rng(12)
    tall = random_matrix(rng, 60, 5, 0.4)
    wide = tall.transposed()
    x = rng.uniform(-1, 1, size=5)
    # A x for tall A is the SpVTM of x with the wide transpose
    u = gather_vector(distributed_spvtm(wide, x, 4))
    expected = dense_oracle(tall).spmv(x)
    assert max_scaled_error(u, expected, spmv_scale(tall, x)) <= 1e-10
