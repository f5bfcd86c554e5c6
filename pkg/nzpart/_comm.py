"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication.

Message passing on a deterministic in-process multi-rank harness.

Every rank program runs in its own thread against a shared `Harness`, which
mediates all cross-rank traffic: buffered point-to-point messages, blocking
group collectives, scans built from point-to-point steps and the two-phase
creation of overlap-zone groups. Collective results are computed once, in
rank order, by the last member to arrive, so they do not depend on thread
scheduling.

Communication cost is accounted in rounds rather than wall-clock time:
a neighbour exchange is one round, a scan ``ceil(log2 P)`` rounds, an
allreduce over S ranks ``ceil(log2 S)`` rounds and a group-creation phase
``ceil(log2 V)`` rounds, V being the largest group created in the phase.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
from collections import defaultdict, deque
from contextlib import contextmanager
from typing import Any, Callable, Iterator, NamedTuple, Sequence, TypeVar

import numpy as np

from nzpart.definitions import (
    WORLD_CONTEXT,
    ZONE_CONTEXT,
    CollectiveKind,
    Parity,
    parity_of,
)
from nzpart.utils import HarnessError, InputValidationError, ceil_log2

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")


class GroupHandle(NamedTuple):
    """A communicator over the contiguous ranks ``lo..hi``."""

    lo: int
    hi: int
    context: str = WORLD_CONTEXT
    parity: Parity | None = None
    zone_rank: int | None = None

    @property
    def size(self) -> int:
        """Number of member ranks."""
        return self.hi - self.lo + 1

    @property
    def members(self) -> range:
        """The member ranks."""
        return range(self.lo, self.hi + 1)

    def includes(self, rank: int) -> bool:
        """Whether `rank` is a member."""
        return self.lo <= rank <= self.hi


class SegPair(NamedTuple):
    """Operand of the segmented sum: accumulator `s` in segment `k`."""

    s: int
    k: int


def seg_op(a: SegPair, b: SegPair) -> SegPair:
    """Segmented addition; restarts the sum when the segment changes.

    Associative but not commutative.
    """
    if a.k == b.k:
        return SegPair(a.s + b.s, b.k)
    return SegPair(b.s, b.k)


def add_op(a: Any, b: Any) -> Any:
    """Plain addition."""
    return a + b


@dataclasses.dataclass
class Traffic:
    """Per-rank communication counters."""

    messages: int = 0
    scalars_sent: int = 0
    rounds: int = 0
    collectives: int = 0

    def copy(self) -> Traffic:
        """Snapshot of the counters."""
        return dataclasses.replace(self)

    def __sub__(self, other: Traffic) -> Traffic:
        """Counters accumulated since `other` was taken."""
        return Traffic(
            self.messages - other.messages,
            self.scalars_sent - other.scalars_sent,
            self.rounds - other.rounds,
            self.collectives - other.collectives,
        )


class CollectiveRecord(NamedTuple):
    """A completed collective, recorded once per group."""

    kind: CollectiveKind
    context: str
    lo: int
    hi: int
    scalars: int
    rounds: int
    label: str

    @property
    def size(self) -> int:
        """Number of participating ranks."""
        return self.hi - self.lo + 1


class _Pending:
    def __init__(self, kind: CollectiveKind, group: GroupHandle) -> None:
        self.kind = kind
        self.group = group
        self.contributions: dict[int, Any] = {}
        self.result: Any = None
        self.error: HarnessError | None = None
        self.done = False
        self.waiters = 0


def _scalar_count(value: Any) -> int:
    if value is None:
        return 0
    if isinstance(value, np.ndarray):
        return int(value.size)
    if isinstance(value, tuple):
        return len(value)
    return 1


def tree_sum(buffers: Sequence[np.ndarray]) -> np.ndarray:
    """Sum buffers pairwise in a fixed, rank-ascending binary tree."""
    level = list(buffers)
    while len(level) > 1:
        paired = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            paired.append(level[-1])
        level = paired
    return level[0]


class Harness:
    """Shared state of one simulated run over P ranks."""

    def __init__(self, P: int, *, poll_interval: float = 0.5) -> None:
        """Create a harness for `P` ranks."""
        if P < 1:
            msg = f"The number of ranks must be at least 1, got {P}"
            raise InputValidationError(msg)
        self.P = P
        self.poll_interval = poll_interval
        self.records: list[CollectiveRecord] = []
        self._cond = threading.Condition()
        self._pending: dict[tuple, _Pending] = {}
        self._mail: dict[tuple[int, int, str], deque] = defaultdict(deque)
        self._recv_waiting: set[tuple[int, int, str]] = set()
        self._terminated: set[int] = set()
        self._blocked = 0
        self._deadlock = False

    def endpoint(self, rank: int) -> RankEndpoint:
        """The endpoint of `rank`."""
        if not 0 <= rank < self.P:
            msg = f"rank {rank} is not in [0, {self.P})"
            raise InputValidationError(msg)
        return RankEndpoint(self, rank)

    def _deadlocked(self) -> bool:
        # Sends never block, so once every live rank waits nobody can proceed.
        if not self._deadlock and self._blocked >= self.P - len(self._terminated):
            self._deadlock = True
        return self._deadlock

    def terminate(self, rank: int) -> None:
        """Mark `rank`'s program as finished."""
        with self._cond:
            self._terminated.add(rank)
            self._cond.notify_all()

    def send(self, src: int, dst: int, tag: str, value: Any) -> None:
        """Buffer a message; never blocks."""
        key = (src, dst, tag)
        with self._cond:
            self._mail[key].append(value)
            if key in self._recv_waiting:
                self._recv_waiting.discard(key)
                self._blocked -= 1
            self._cond.notify_all()

    def recv(self, src: int, dst: int, tag: str) -> Any:
        """Block until a message from `src` arrives."""
        key = (src, dst, tag)
        with self._cond:
            box = self._mail[key]
            if box:
                return box.popleft()
            self._recv_waiting.add(key)
            self._blocked += 1
            while not box:
                reason = None
                if self._deadlock:
                    reason = "deadlock"
                elif src in self._terminated:
                    reason = "has terminated"
                elif self._deadlocked():
                    reason = "deadlock"
                if reason is not None:
                    self._recv_waiting.discard(key)
                    self._blocked -= 1
                    self._cond.notify_all()
                    msg = f"rank {dst} waits for a `{tag}` message from rank {src}: {reason}"
                    raise HarnessError(msg)
                self._cond.wait(self.poll_interval)
            return box.popleft()

    def collective(
        self,
        rank: int,
        key: tuple,
        kind: CollectiveKind,
        group: GroupHandle,
        payload: Any,
        combine: Callable[[list[Any]], Any],
        *,
        scalars: int = 0,
        rounds: int = 0,
        label: str = "",
    ) -> Any:
        """Contribute `payload` and block until every group member has done so.

        `combine` receives the contributions in rank order; it runs once,
        on the last member to arrive.
        """
        with self._cond:
            op = self._pending.get(key)
            if op is None:
                op = _Pending(kind, group)
                self._pending[key] = op
            if op.kind != kind or op.group != group:
                op.error = HarnessError(
                    f"rank {rank} entered `{kind}` on {group.context}[{group.lo},"
                    f" {group.hi}] while peers entered `{op.kind}` on"
                    f" {op.group.context}[{op.group.lo}, {op.group.hi}]",
                )
                self._pending.pop(key, None)
                self._cond.notify_all()
                raise op.error
            op.contributions[rank] = payload
            if len(op.contributions) == group.size:
                return self._complete(key, op, combine, scalars, rounds, label)
            op.waiters += 1
            self._blocked += 1
            while not op.done:
                if op.error is None:
                    missing = [
                        r for r in group.members if r not in op.contributions
                    ]
                    if any(r in self._terminated for r in missing):
                        op.error = HarnessError(
                            f"`{kind}` on {group.context}[{group.lo}, {group.hi}]"
                            f" can never complete: ranks {missing} are missing and"
                            " some have terminated",
                        )
                    elif self._deadlocked():
                        op.error = HarnessError(
                            f"deadlock: every live rank is blocked; `{kind}` on"
                            f" {group.context}[{group.lo}, {group.hi}] waits for"
                            f" ranks {missing}",
                        )
                if op.error is not None:
                    op.waiters -= 1
                    self._blocked -= 1
                    self._pending.pop(key, None)
                    self._cond.notify_all()
                    raise op.error
                self._cond.wait(self.poll_interval)
            return op.result

    def _complete(
        self,
        key: tuple,
        op: _Pending,
        combine: Callable[[list[Any]], Any],
        scalars: int,
        rounds: int,
        label: str,
    ) -> Any:
        del self._pending[key]
        ordered = [op.contributions[r] for r in sorted(op.contributions)]
        try:
            op.result = combine(ordered)
        except HarnessError as e:
            op.error = e
            self._cond.notify_all()
            raise
        op.done = True
        self._blocked -= op.waiters
        op.waiters = 0
        record = CollectiveRecord(
            op.kind,
            op.group.context,
            op.group.lo,
            op.group.hi,
            scalars,
            rounds,
            label,
        )
        self.records.append(record)
        LOGGER.debug("completed %s", record)
        self._cond.notify_all()
        return op.result


class RankEndpoint:
    """The communication endpoint of one rank; confined to that rank's thread."""

    def __init__(self, harness: Harness, rank: int) -> None:
        """Bind `rank` to `harness`."""
        self.rank = rank
        self.P = harness.P
        self.traffic = Traffic()
        self.label = ""
        self._harness = harness
        self._seq: dict[tuple[str, int, int], int] = defaultdict(int)

    @property
    def world(self) -> GroupHandle:
        """The group of all ranks."""
        return GroupHandle(0, self.P - 1)

    @contextmanager
    def section(self, label: str) -> Iterator[None]:
        """Label the collectives completed by this rank within the block."""
        previous, self.label = self.label, label
        try:
            yield
        finally:
            self.label = previous

    def send(self, dest: int, value: Any, tag: str) -> None:
        """Send `value` to rank `dest`."""
        self.traffic.messages += 1
        self.traffic.scalars_sent += _scalar_count(value)
        self._harness.send(self.rank, dest, tag, value)

    def recv(self, source: int, tag: str) -> Any:
        """Receive the next `tag` message from rank `source`."""
        return self._harness.recv(source, self.rank, tag)

    def sendrecv(
        self,
        dest: int | None,
        value: Any,
        source: int | None,
        tag: str,
    ) -> Any:
        """Send to `dest` and receive from `source`; either may be None."""
        if dest is not None:
            self.send(dest, value, tag)
        if source is None:
            return None
        return self.recv(source, tag)

    def _collective(
        self,
        kind: CollectiveKind,
        group: GroupHandle,
        payload: Any,
        combine: Callable[[list[Any]], Any],
        *,
        scalars: int = 0,
        rounds: int = 0,
    ) -> Any:
        if not group.includes(self.rank):
            msg = f"rank {self.rank} is not a member of {group}"
            raise HarnessError(msg)
        counter = (group.context, group.lo, group.hi)
        seq = self._seq[counter]
        self._seq[counter] += 1
        self.traffic.collectives += 1
        self.traffic.rounds += rounds
        return self._harness.collective(
            self.rank,
            (*counter, seq),
            kind,
            group,
            payload,
            combine,
            scalars=scalars,
            rounds=rounds,
            label=self.label,
        )

    def allreduce_sum(self, group: GroupHandle, buffer: Any) -> np.ndarray:
        """Element-wise sum over the group, identical on every member."""
        data = np.array(buffer, dtype=np.float64, copy=True).reshape(-1)

        def combine(buffers: list[np.ndarray]) -> np.ndarray:
            lengths = {len(b) for b in buffers}
            if len(lengths) != 1:
                msg = f"allreduce buffer lengths differ across members: {sorted(lengths)}"
                raise HarnessError(msg)
            return tree_sum(buffers)

        self.traffic.scalars_sent += len(data)
        result = self._collective(
            "allreduce",
            group,
            data,
            combine,
            scalars=len(data),
            rounds=ceil_log2(group.size),
        )
        return result.copy()

    def barrier(self, group: GroupHandle | None = None) -> None:
        """Block until every member of `group` (default: all ranks) arrives."""
        group = self.world if group is None else group
        self._collective(
            "barrier",
            group,
            None,
            lambda _: None,
            rounds=ceil_log2(group.size),
        )


def run_ranks(
    P: int,
    program: Callable[[RankEndpoint], T],
    *,
    harness: Harness | None = None,
) -> list[T]:
    """Run `program` once per rank and return the per-rank results.

    If any rank fails, the root-cause exception of the lowest failing rank
    is raised; `HarnessError`s of ranks that were merely left waiting are
    only raised when nothing else went wrong.
    """
    harness = Harness(P) if harness is None else harness
    if harness.P != P:
        msg = f"harness has {harness.P} ranks, expected {P}"
        raise InputValidationError(msg)
    results: list[Any] = [None] * P
    errors: list[BaseException | None] = [None] * P

    def target(rank: int) -> None:
        endpoint = harness.endpoint(rank)
        try:
            results[rank] = program(endpoint)
        except BaseException as e:  # noqa: BLE001
            errors[rank] = e
        finally:
            harness.terminate(rank)

    if P == 1:
        target(0)
    else:
        threads = [
            threading.Thread(target=target, args=(rank,), name=f"rank-{rank}")
            for rank in range(P)
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
    failures = [e for e in errors if e is not None]
    if failures:
        root = next(
            (e for e in failures if not isinstance(e, HarnessError)),
            failures[0],
        )
        raise root
    return results


def neighbor_exchange(
    endpoint: RankEndpoint,
    send_right: Any,
    send_left: Any,
) -> tuple[Any, Any]:
    """Swap values with both neighbours.

    Returns
    -------
    ``(from_left, from_right)``; None where the neighbour does not exist.

    """
    rank, P = endpoint.rank, endpoint.P
    left = rank - 1 if rank > 0 else None
    right = rank + 1 if rank < P - 1 else None
    if right is not None:
        endpoint.send(right, send_right, "nbr")
    if left is not None:
        endpoint.send(left, send_left, "nbr")
    from_left = endpoint.recv(left, "nbr") if left is not None else None
    from_right = endpoint.recv(right, "nbr") if right is not None else None
    if left is not None or right is not None:
        endpoint.traffic.rounds += 1
    return from_left, from_right


def scan_forward(
    endpoint: RankEndpoint,
    value: T,
    op: Callable[[T, T], T],
) -> T:
    """Inclusive prefix ``value_0 op ... op value_rank`` by recursive doubling."""
    rank, P = endpoint.rank, endpoint.P
    acc = value
    step = 1
    while step < P:
        dest = rank + step if rank + step < P else None
        source = rank - step if rank - step >= 0 else None
        received = endpoint.sendrecv(dest, acc, source, f"scanf{step}")
        if source is not None:
            acc = op(received, acc)
        endpoint.traffic.rounds += 1
        step *= 2
    return acc


def scan_backward(
    endpoint: RankEndpoint,
    value: T,
    op: Callable[[T, T], T],
) -> T:
    """Inclusive suffix ``value_{P-1} op ... op value_rank`` by recursive doubling."""
    rank, P = endpoint.rank, endpoint.P
    acc = value
    step = 1
    while step < P:
        dest = rank - step if rank - step >= 0 else None
        source = rank + step if rank + step < P else None
        received = endpoint.sendrecv(dest, acc, source, f"scanb{step}")
        if source is not None:
            acc = op(received, acc)
        endpoint.traffic.rounds += 1
        step *= 2
    return acc


class ZoneClaim(NamedTuple):
    """A rank's claim to belong to zone `zone_rank` spanning ``lo..hi``."""

    zone_rank: int
    lo: int
    hi: int


def _create_phase(
    endpoint: RankEndpoint,
    claim: ZoneClaim | None,
    parity: Parity,
) -> GroupHandle | None:
    """Create the groups of one parity with a gather over the whole world.

    The gather is charged ``ceil(log2 V)`` rounds, V being the largest zone of
    this parity, the cost of a per-zone tree over disjoint member ranges.
    """
    rank = endpoint.rank

    def combine(claims: list[ZoneClaim | None]) -> list[ZoneClaim | None]:
        for owner, c in enumerate(claims):
            if c is None:
                continue
            if parity_of(c.zone_rank) != parity:
                msg = f"rank {owner} claims zone {c.zone_rank} in the {parity} phase"
                raise HarnessError(msg)
            if not c.lo <= owner <= c.hi or c.hi >= len(claims):
                msg = f"rank {owner} claims range [{c.lo}, {c.hi}] it does not belong to"
                raise HarnessError(msg)
            disagreeing = [q for q in range(c.lo, c.hi + 1) if claims[q] != c]
            if disagreeing:
                msg = (
                    f"inconsistent {parity} zone ranges: rank {owner} claims"
                    f" {tuple(c)}, ranks {disagreeing} disagree"
                )
                raise HarnessError(msg)
        return claims

    largest = 0
    claims = endpoint._collective("create_groups", endpoint.world, claim, combine)
    for c in claims:
        if c is not None:
            largest = max(largest, c.hi - c.lo + 1)
    endpoint.traffic.rounds += ceil_log2(largest)
    if claim is None:
        return None
    LOGGER.debug("rank %d joins %s zone %d", rank, parity, claim.zone_rank)
    return GroupHandle(
        claim.lo,
        claim.hi,
        f"{ZONE_CONTEXT}{claim.zone_rank}",
        parity,
        claim.zone_rank,
    )


def create_groups_two_phase(
    endpoint: RankEndpoint,
    even_range: ZoneClaim | None,
    odd_range: ZoneClaim | None,
) -> tuple[GroupHandle | None, GroupHandle | None]:
    """Create all even-ranked zone groups at once, then all odd-ranked ones.

    Every rank takes part in both phases, passing None when it has no zone
    of that parity.
    """
    if endpoint.P == 1:
        return None, None
    even = _create_phase(endpoint, even_range, "even")
    odd = _create_phase(endpoint, odd_range, "odd")
    return even, odd
