"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Distributed setup of the overlap-zone groups in ``O(log P)`` rounds.

Each rank only knows the first and last column of its own chunk. The setup
avoids any all-to-all step:

1. one neighbour exchange yields the ``need_left``/``need_right`` flags;
2. an additive scan over ``left_group_end`` ranks the groups left to right;
3. a forward and a backward segmented scan give each rank's position inside
   its left and right group;
4. the groups are created in two phases, even-ranked zones first.

The per-rank variables use snake_case names for needLeft, needRight,
leftGroupEnd, rightGroup, leftGroup, procsOnLeft and procsOnRight.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

from nzpart._comm import (
    GroupHandle,
    RankEndpoint,
    SegPair,
    ZoneClaim,
    add_op,
    create_groups_two_phase,
    neighbor_exchange,
    scan_backward,
    scan_forward,
    seg_op,
)
from nzpart._partition import OverlapZone
from nzpart.definitions import parity_of
from nzpart.utils import ConsistencyError, UnsupportedConfigurationError

LOGGER = logging.getLogger(__name__)


class SetupVars(NamedTuple):
    """The seven per-rank setup variables."""

    need_left: int
    need_right: int
    left_group_end: int
    right_group: int
    left_group: int
    procs_on_left: int
    procs_on_right: int


class ZoneMembership(NamedTuple):
    """The zones a rank belongs to, at most one of each parity."""

    even_zone: OverlapZone | None = None
    odd_zone: OverlapZone | None = None

    def zones(self) -> list[OverlapZone]:
        """Member zones ordered by zone rank."""
        found = [z for z in (self.even_zone, self.odd_zone) if z is not None]
        return sorted(found, key=lambda z: z.zone_rank)


class ZoneSetup(NamedTuple):
    """Result of the setup on one rank."""

    vars: SetupVars
    membership: ZoneMembership
    even_group: GroupHandle | None
    odd_group: GroupHandle | None
    rounds: int


def _require_columns(rank: int, j_f: int | None, j_l: int | None) -> None:
    if j_f is None or j_l is None:
        msg = (
            f"rank {rank} holds no nonzeros; overlap-zone setup requires"
            " every chunk to be nonempty (Z >= P)"
        )
        raise UnsupportedConfigurationError(msg)


def compute_flags(
    endpoint: RankEndpoint,
    j_f: int | None,
    j_l: int | None,
) -> tuple[int, int]:
    """Whether the first (last) column is shared with the left (right) neighbour."""
    _require_columns(endpoint.rank, j_f, j_l)
    from_left, from_right = neighbor_exchange(endpoint, send_right=j_l, send_left=j_f)
    need_left = int(from_left is not None and from_left == j_f)
    need_right = int(from_right is not None and from_right == j_l)
    return need_left, need_right


def compute_group_ranks(
    endpoint: RankEndpoint,
    flags: tuple[int, int],
    j_f: int,
    j_l: int,
) -> tuple[int, int, int]:
    """Rank the groups left to right.

    Returns
    -------
    ``(left_group_end, right_group, left_group)``

    """
    need_left, need_right = flags
    left_group_end = int(need_left == 1 and (need_right == 0 or j_f != j_l))
    right_group = scan_forward(endpoint, left_group_end, add_op)
    return left_group_end, right_group, right_group - left_group_end


def compute_extents(
    endpoint: RankEndpoint,
    need_left: int,
    need_right: int,
    left_group: int,
    right_group: int,
) -> tuple[int, int]:
    """Count the group members on each side of this rank.

    Returns
    -------
    ``(procs_on_left, procs_on_right)``; only meaningful where the
    corresponding flag is set.

    """
    on_left = scan_forward(endpoint, SegPair(need_left, left_group), seg_op)
    on_right = scan_backward(endpoint, SegPair(need_right, right_group), seg_op)
    return on_left.s, on_right.s


def derive_memberships(
    setup_vars: SetupVars,
    rank: int,
    P: int,
    j_f: int,
    j_l: int,
) -> ZoneMembership:
    """Turn the setup variables into this rank's zones."""
    v = setup_vars
    zones: list[OverlapZone] = []
    if v.need_left and v.need_right and j_f == j_l:
        zones.append(
            OverlapZone(
                v.left_group,
                j_f,
                rank - v.procs_on_left,
                rank + v.procs_on_right,
            ),
        )
    else:
        if v.need_left:
            zones.append(OverlapZone(v.left_group, j_f, rank - v.procs_on_left, rank))
        if v.need_right:
            zones.append(
                OverlapZone(v.right_group, j_l, rank, rank + v.procs_on_right),
            )
    slots: dict[str, OverlapZone] = {}
    for zone in zones:
        if zone.lo < 0 or zone.hi >= P or zone.lo >= zone.hi:
            msg = f"rank {rank} derived zone {tuple(zone)} outside [0, {P})"
            raise ConsistencyError(msg)
        parity = parity_of(zone.zone_rank)
        if parity in slots:
            msg = f"rank {rank} derived two {parity} zones: {slots[parity]}, {zone}"
            raise ConsistencyError(msg)
        slots[parity] = zone
    return ZoneMembership(slots.get("even"), slots.get("odd"))


def _claim(zone: OverlapZone | None) -> ZoneClaim | None:
    if zone is None:
        return None
    return ZoneClaim(zone.zone_rank, zone.lo, zone.hi)


def setup(endpoint: RankEndpoint, j_f: int | None, j_l: int | None) -> ZoneSetup:
    """Run the whole overlap-zone setup on this rank."""
    start = endpoint.traffic.copy()
    _require_columns(endpoint.rank, j_f, j_l)
    assert j_f is not None
    assert j_l is not None
    flags = compute_flags(endpoint, j_f, j_l)
    left_group_end, right_group, left_group = compute_group_ranks(
        endpoint,
        flags,
        j_f,
        j_l,
    )
    procs_on_left, procs_on_right = compute_extents(
        endpoint,
        flags[0],
        flags[1],
        left_group,
        right_group,
    )
    setup_vars = SetupVars(
        flags[0],
        flags[1],
        left_group_end,
        right_group,
        left_group,
        procs_on_left,
        procs_on_right,
    )
    membership = derive_memberships(setup_vars, endpoint.rank, endpoint.P, j_f, j_l)
    even_group, odd_group = create_groups_two_phase(
        endpoint,
        _claim(membership.even_zone),
        _claim(membership.odd_zone),
    )
    rounds = (endpoint.traffic - start).rounds
    LOGGER.debug(
        "rank %d setup: %s, zones %s, %d rounds",
        endpoint.rank,
        setup_vars,
        membership.zones(),
        rounds,
    )
    return ZoneSetup(setup_vars, membership, even_group, odd_group, rounds)
