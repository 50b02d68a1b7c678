"""Finite-capacity resource pools with queued grants and utilization tracking."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Protocol, Sequence

from .errors import (
    AlreadyReleased,
    GrantNotActive,
    RunNotFinished,
    UnitsExceedCapacity,
)
from .kernel import (
    ConflictKind,
    ConflictReport,
    Engine,
    EventHandle,
    EventKind,
    Queued,
)


class ResourceKind(Enum):
    PERSONNEL = "Personnel"
    FACILITY = "Facility"
    EQUIPMENT = "Equipment"


class GrantState(Enum):
    QUEUED = "queued"
    ACTIVE = "active"
    RELEASED = "released"


@dataclass(eq=False)
class Grant:
    grant_id: int
    resource_id: str
    holder: str
    units: int
    duration: float
    requested_at: float
    state: GrantState = GrantState.QUEUED
    granted_at: Optional[float] = None
    released_at: Optional[float] = None
    position: int = 0  # queue position at request time, 0 if granted at once
    shortage: Optional[ConflictReport] = None
    on_grant: Optional[Callable[["Grant"], None]] = field(default=None, repr=False)
    on_release: Optional[Callable[["Grant"], None]] = field(default=None, repr=False)
    handle: Optional[EventHandle] = field(default=None, repr=False)

    @property
    def granted(self) -> bool:
        return self.state is not GrantState.QUEUED

    @property
    def wait(self) -> Optional[float]:
        return None if self.granted_at is None else self.granted_at - self.requested_at


@dataclass
class Resource:
    resource_id: str
    kind: ResourceKind
    capacity: int
    in_use: int = 0
    wait_queue: deque = field(default_factory=deque)
    busy_time: float = 0.0
    last_change: float = 0.0
    max_queue_len: int = 0
    waits: list = field(default_factory=list)  # waits of grants that had queued

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"{self.resource_id}: capacity must be positive")

    def _integrate(self, t: float) -> None:
        self.busy_time += self.in_use * (t - self.last_change)
        self.last_change = t


@dataclass(frozen=True)
class UtilizationRecord:
    resource_id: str
    capacity: int
    busy_time: float
    horizon: float
    utilization: float
    max_queue_len: int
    mean_wait: float
    grants: int

    def as_dict(self) -> dict:
        return {
            "resource_id": self.resource_id, "capacity": self.capacity,
            "busy_time": self.busy_time, "horizon": self.horizon,
            "utilization": self.utilization, "max_queue_len": self.max_queue_len,
            "mean_wait": self.mean_wait, "grants": self.grants,
        }


@dataclass(frozen=True)
class PoolLogEntry:
    time: float
    resource_id: str
    grant_id: int
    holder: str
    action: str  # request | grant | release
    in_use: int
    queue_len: int


class AllocationPolicy(Protocol):
    def select(self, queue: Sequence[Grant], free_units: int) -> Optional[int]:
        """Index of the queued grant to serve next, or ``None`` to wait."""


class FifoPolicy:
    """Strict first-come first-served: the head blocks those behind it."""

    def select(self, queue, free_units):
        if queue and queue[0].units <= free_units:
            return 0
        return None


class ResourcePool:
    def __init__(self, engine: Engine, policy: Optional[AllocationPolicy] = None):
        self.engine = engine
        self.policy = policy or FifoPolicy()
        self.resources: dict[str, Resource] = {}
        self.grants: list[Grant] = []
        self.log: list[PoolLogEntry] = []
        self.finished_at: Optional[float] = None
        self._ids = itertools.count(1)

    def add(self, resource_id: str, kind: ResourceKind, capacity: int) -> Resource:
        if resource_id in self.resources:
            raise ValueError(f"duplicate resource {resource_id}")
        res = Resource(resource_id, kind, int(capacity), last_change=self.engine.now)
        self.resources[resource_id] = res
        return res

    def _note(self, res: Resource, grant: Grant, action: str) -> None:
        assert 0 <= res.in_use <= res.capacity, f"{res.resource_id} over capacity"
        self.log.append(PoolLogEntry(self.engine.now, res.resource_id, grant.grant_id,
                                     grant.holder, action, res.in_use, len(res.wait_queue)))

    def request(self, resource_id: str, units: int, holder: str, duration: float,
                on_grant: Optional[Callable[[Grant], None]] = None,
                on_release: Optional[Callable[[Grant], None]] = None) -> Grant:
        """Grant ``units`` now if they fit and nobody is waiting, else queue FIFO.

        A granted hold ends with a ResourceFreed event after ``duration``.
        """
        res = self.resources[resource_id]
        if units < 1 or units > res.capacity:
            raise UnitsExceedCapacity(f"{units} units requested from {resource_id} "
                                      f"(capacity {res.capacity})")
        now = self.engine.now
        grant = Grant(next(self._ids), resource_id, holder, int(units), float(duration), now,
                      on_grant=on_grant, on_release=on_release)
        self.grants.append(grant)
        if not res.wait_queue and res.in_use + units <= res.capacity:
            self._note(res, grant, "request")
            self._start(res, grant)
        else:
            res.wait_queue.append(grant)
            grant.position = len(res.wait_queue)
            grant.shortage = ConflictReport(ConflictKind.RESOURCE_SHORTAGE,
                                            (grant.grant_id,), Queued(grant.position))
            res.max_queue_len = max(res.max_queue_len, len(res.wait_queue))
            self._note(res, grant, "request")
        return grant

    def _start(self, res: Resource, grant: Grant) -> None:
        now = self.engine.now
        res._integrate(now)
        res.in_use += grant.units
        grant.state = GrantState.ACTIVE
        grant.granted_at = now
        if grant.position:
            res.waits.append(now - grant.requested_at)
        self._note(res, grant, "grant")
        grant.handle = self.engine.schedule_in(grant.duration, EventKind.RESOURCE_FREED,
                                               res.resource_id, action=self._freed,
                                               payload=grant)
        if grant.on_grant is not None:
            grant.on_grant(grant)

    def _freed(self, event) -> None:
        self.release(event.payload)

    def release(self, grant: Grant) -> list[Grant]:
        """Return the grant's units and serve waiters at the same timestamp."""
        if grant.state is GrantState.RELEASED:
            raise AlreadyReleased(f"grant {grant.grant_id} already released")
        if grant.state is not GrantState.ACTIVE:
            raise GrantNotActive(f"grant {grant.grant_id} is still queued")
        res = self.resources[grant.resource_id]
        now = self.engine.now
        if grant.handle is not None:
            self.engine.cancel(grant.handle)
        res._integrate(now)
        res.in_use -= grant.units
        grant.state = GrantState.RELEASED
        grant.released_at = now
        self._note(res, grant, "release")
        served = []
        while res.wait_queue:
            idx = self.policy.select(res.wait_queue, res.capacity - res.in_use)
            if idx is None:
                break
            nxt = res.wait_queue[idx]
            del res.wait_queue[idx]
            self._start(res, nxt)
            served.append(nxt)
        if grant.on_release is not None:
            grant.on_release(grant)
        return served

    def close(self, horizon: float) -> None:
        """Mark the run finished; busy time is integrated up to ``horizon``."""
        for res in self.resources.values():
            if res.last_change < horizon:
                res._integrate(horizon)
        self.finished_at = horizon

    def utilization_report(self, resource_id: str, horizon: Optional[float] = None
                           ) -> UtilizationRecord:
        if self.finished_at is None:
            raise RunNotFinished("close() the pool before reporting")
        horizon = self.finished_at if horizon is None else horizon
        res = self.resources[resource_id]
        util = res.busy_time / (res.capacity * horizon) if horizon > 0 else 0.0
        mean_wait = sum(res.waits) / len(res.waits) if res.waits else 0.0
        n = sum(1 for g in self.grants if g.resource_id == resource_id and g.granted)
        return UtilizationRecord(resource_id, res.capacity, res.busy_time, horizon,
                                 util, res.max_queue_len, mean_wait, n)

    def reports(self) -> list[UtilizationRecord]:
        return [self.utilization_report(rid) for rid in sorted(self.resources)]


def detect_bottleneck(records: Iterable[UtilizationRecord], threshold: float = 0.9,
                      wait_ceiling: float = 3600.0) -> list[str]:
    """Resources that are saturated, or that made requests wait too long."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1]")
    return [r.resource_id for r in records
            if r.utilization >= threshold
            or (r.max_queue_len > 0 and r.mean_wait > wait_ceiling)]
