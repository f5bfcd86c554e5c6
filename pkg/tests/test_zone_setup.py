"""Tests for the distributed overlap-zone setup."""

from __future__ import annotations

import numpy as np
import pytest

from nzpart._matgen import GenParams, gen_random, worked_example_matrix
from nzpart._partition import build_cover, chunk_bounds, zones_oracle
from nzpart._sparse import CooMatrix
from nzpart._zone_setup import SetupVars, derive_memberships
from nzpart.definitions import SETUP_ROUNDS_CONSTANT, SETUP_ROUNDS_PER_LOG_P
from nzpart.utils import ConsistencyError, UnsupportedConfigurationError, ceil_log2

from .helpers import WORKED_EXAMPLE_ZONES, random_matrix, run_setup, setup_zones

WORKED_EXAMPLE_SETUP_VARS = {
    "need_left": [0, 1, 0, 1, 1, 1, 0],
    "need_right": [1, 0, 1, 1, 1, 0, 0],
    "left_group_end": [0, 1, 0, 0, 1, 1, 0],
    "right_group": [0, 1, 1, 1, 2, 3, 3],
    "left_group": [0, 0, 1, 1, 1, 2, 3],
    "procs_on_left": [0, 1, 0, 1, 2, 1, 0],
    "procs_on_right": [1, 2, 2, 1, 1, 0, 0],
}


def test_worked_example_setup_variables() -> None:
    setups = run_setup(worked_example_matrix(), 7)
    for name, expected in WORKED_EXAMPLE_SETUP_VARS.items():
        assert [getattr(s.vars, name) for s in setups] == expected, name


def test_worked_example_memberships() -> None:
    setups = run_setup(worked_example_matrix(), 7)
    assert setup_zones(setups) == WORKED_EXAMPLE_ZONES
    members = [[z.zone_rank for z in s.membership.zones()] for s in setups]
    assert members == [[0], [0], [1], [1], [1, 2], [2], []]
    rank4 = setups[4]
    assert rank4.odd_group is not None
    assert (rank4.odd_group.lo, rank4.odd_group.hi) == (2, 4)
    assert rank4.even_group is not None
    assert (rank4.even_group.lo, rank4.even_group.hi) == (4, 5)
    assert setups[6].even_group is None
    assert setups[6].odd_group is None


def test_worked_example_setup_rounds() -> None:
    setups = run_setup(worked_example_matrix(), 7)
    # exchange 1, three scans of 3, even phase 1 (size 2), odd phase 2 (size 3)
    assert {s.rounds for s in setups} == {13}
    assert 13 <= SETUP_ROUNDS_PER_LOG_P * ceil_log2(7) + SETUP_ROUNDS_CONSTANT  # noqa: PLR2004


def test_single_rank_needs_no_communication() -> None:
    [only] = run_setup(worked_example_matrix(), 1)
    assert only.rounds == 0
    assert only.membership.zones() == []
    assert only.vars == SetupVars(0, 0, 0, 0, 0, 0, 0)


def test_single_zone_over_three_ranks() -> None:
    A = CooMatrix.from_triples(3, 1, [(0, 0, 1.0), (1, 0, 2.0), (2, 0, 3.0)])
    setups = run_setup(A, 3)
    assert [s.vars.need_left for s in setups] == [0, 1, 1]
    assert [s.vars.need_right for s in setups] == [1, 1, 0]
    assert [s.vars.procs_on_left for s in setups] == [0, 1, 2]
    assert [s.vars.procs_on_right for s in setups] == [2, 1, 0]
    assert setup_zones(setups) == [(0, 0, 0, 2)]


def test_setup_values_do_not_matter() -> None:
    A = worked_example_matrix(np.random.default_rng(0).uniform(-1, 1, 21))
    assert setup_zones(run_setup(A, 7)) == WORKED_EXAMPLE_ZONES


def test_empty_chunk_is_rejected() -> None:
    with pytest.raises(UnsupportedConfigurationError, match="holds no nonzeros"):
        run_setup(worked_example_matrix(), 22)


def test_setup_equals_oracle_on_random_matrices() -> None:
    rng = np.random.default_rng(7)
    for trial in range(60):
        A = random_matrix(
            rng,
            int(rng.integers(1, 40)),
            int(rng.integers(1, 120)),
            float(rng.uniform(0.02, 0.5)),
            n_dense=int(rng.integers(0, 3)),
            n_empty=int(rng.integers(0, 5)),
        )
        choices = [1, 2, 3, 7, 16, A.nnz] if A.nnz <= 150 else [1, 2, 3, 7, 16]  # noqa: PLR2004
        P = min(int(rng.choice(choices)), A.nnz)
        expected = zones_oracle(build_cover(A, chunk_bounds(A.nnz, P)))
        setups = run_setup(A, P)
        assert setup_zones(setups) == [tuple(z) for z in expected], trial
        for rank, s in enumerate(setups):
            mine = [tuple(z) for z in expected if z.lo <= rank <= z.hi]
            assert [tuple(z) for z in s.membership.zones()] == mine
            assert s.rounds <= SETUP_ROUNDS_PER_LOG_P * ceil_log2(P) + SETUP_ROUNDS_CONSTANT


@pytest.mark.parametrize("P", [4, 8, 16])
def test_setup_rounds_do_not_depend_on_nnz(P: int) -> None:
    rounds = []
    for n in (400, 800, 1600):
        A = gen_random(GenParams(m=64, n=n, rho=0.5, iminus=2, iplus=3, seed=n))
        setups = run_setup(A, P)
        rounds.append({s.rounds for s in setups})
    assert rounds[0] == rounds[1] == rounds[2]
    [value] = rounds[0]
    assert value <= SETUP_ROUNDS_PER_LOG_P * ceil_log2(P) + SETUP_ROUNDS_CONSTANT


def test_derive_memberships_checks_ranges() -> None:
    bad = SetupVars(1, 0, 1, 1, 0, 3, 0)
    with pytest.raises(ConsistencyError, match="outside"):
        derive_memberships(bad, rank=1, P=4, j_f=2, j_l=5)
    same_parity = SetupVars(1, 1, 1, 2, 0, 1, 1)
    with pytest.raises(ConsistencyError, match="two even zones"):
        derive_memberships(same_parity, rank=1, P=4, j_f=2, j_l=5)


def test_extents_count_positions_inside_each_zone() -> None:
    rng = np.random.default_rng(11)
    for trial in range(40):
        A = random_matrix(
            rng,
            int(rng.integers(2, 30)),
            int(rng.integers(1, 60)),
            float(rng.uniform(0.05, 0.6)),
            n_dense=int(rng.integers(0, 3)),
        )
        P = min(int(rng.choice([2, 3, 5, 8, 13])), A.nnz)
        setups = run_setup(A, P)
        for _, _, lo, hi in setup_zones(setups):
            # the first member may count in a previous zone, the last in a next one
            after_first = [setups[r].vars.procs_on_left for r in range(lo + 1, hi + 1)]
            before_last = [setups[r].vars.procs_on_right for r in range(lo, hi)]
            assert after_first == list(range(1, hi - lo + 1)), trial
            assert before_last == list(range(hi - lo, 0, -1)), trial
            assert all(setups[r].vars.need_left == 1 for r in range(lo + 1, hi + 1))
            assert all(setups[r].vars.need_right == 1 for r in range(lo, hi))
