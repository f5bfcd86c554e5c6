"""nzpart tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from nzpart._comm import run_ranks
from nzpart._partition import local_matrix
from nzpart._sparse import CooMatrix
from nzpart._zone_setup import ZoneSetup, setup

REPO_ROOT = Path(__file__).parent.parent

# Zones of the worked example on 7 ranks: (zone rank, column, lo, hi).
WORKED_EXAMPLE_ZONES = [(0, 1, 0, 1), (1, 3, 2, 4), (2, 5, 4, 5)]


def random_matrix(
    rng: np.random.Generator,
    m: int,
    n: int,
    density: float,
    *,
    n_dense: int = 0,
    n_empty: int = 0,
) -> CooMatrix:
    """A random matrix with optional dense and empty columns and at least one nonzero."""
    mask = rng.random((m, n)) < density
    for col in rng.choice(n, size=min(n_dense, n), replace=False):
        mask[:, col] = rng.random(m) < 0.9  # noqa: PLR2004
    empty = rng.choice(n, size=min(n_empty, n - 1), replace=False)
    mask[:, empty] = False
    if not mask.any():
        keep = np.setdiff1d(np.arange(n), empty)
        mask[rng.integers(m), keep[0]] = True
    cols, rows = np.nonzero(mask.T)
    values = rng.uniform(-1.0, 1.0, size=len(rows))
    return CooMatrix(m, n, rows, cols, values)


def run_setup(A: CooMatrix, P: int) -> list[ZoneSetup]:
    """Run the distributed zone setup of `A` on P ranks."""

    def program(endpoint):  # noqa: ANN001, ANN202
        local = local_matrix(A, P, endpoint.rank)
        return setup(endpoint, local.j_first, local.j_last)

    return run_ranks(P, program)


def setup_zones(setups: list[ZoneSetup]) -> list[tuple[int, int, int, int]]:
    """The distinct zones found by all ranks, sorted by zone rank."""
    found = {tuple(z) for s in setups for z in s.membership.zones()}
    return sorted(found)
