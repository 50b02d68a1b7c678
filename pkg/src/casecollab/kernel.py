"""Deterministic discrete-event engine.

Events are dispatched in ``(time, priority, seq)`` order: earliest time
first, then the lower priority value, then insertion order. Time is
seconds since simulation start.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional

from .errors import (
    DispatchError,
    HorizonBehindClock,
    SchedulingInPast,
    UnknownHandle,
)

PRIORITY_MIN = 0
PRIORITY_MAX = 9
DEFAULT_PRIORITY = 5
CRITICAL_PRIORITY = 3


class EventKind(Enum):
    CASE_ARRIVAL = "CaseArrival"
    REQUEST_DELIVERED = "RequestDelivered"
    CONTRIBUTION_SUBMITTED = "ContributionSubmitted"
    VALIDATION_COMPLETED = "ValidationCompleted"
    MERGE_COMPLETED = "MergeCompleted"
    RESOURCE_FREED = "ResourceFreed"
    SYNC_TICK = "SyncTick"
    APPOINTMENT_START = "AppointmentStart"
    APPOINTMENT_END = "AppointmentEnd"


KIND_PRIORITY = {
    EventKind.VALIDATION_COMPLETED: CRITICAL_PRIORITY,
    EventKind.MERGE_COMPLETED: CRITICAL_PRIORITY,
}


class EventState(Enum):
    LIVE = "live"
    DISPATCHED = "dispatched"
    CANCELLED = "cancelled"


class CancelResult(Enum):
    CANCELLED = "Cancelled"
    ALREADY_DISPATCHED = "AlreadyDispatched"


@dataclass(eq=False)
class Event:
    id: int
    time: float
    priority: int
    seq: int
    kind: EventKind
    target: str
    action: Optional[Callable[["Event"], Any]] = field(default=None, repr=False)
    payload: Any = field(default=None, repr=False)
    state: EventState = EventState.LIVE

    @property
    def key(self) -> tuple[float, int, int]:
        return (self.time, self.priority, self.seq)

    def trace_line(self) -> str:
        return f"{self.time:.3f}\t{self.kind.value}\t{self.target}\t{self.priority}\t{self.seq}"


@dataclass(frozen=True, eq=False)
class EventHandle:
    engine: "Engine"
    event: Event


class Engine:
    """Single-threaded event engine owning a clock and a priority queue.

    ``step()`` pops the minimum event, advances the clock and runs the
    event's action (if any). Cancelled events are dropped lazily.
    """

    _run_ids = itertools.count(1)

    def __init__(self, trace: bool = False):
        self.run_id = next(self._run_ids)
        self.now = 0.0
        self._heap: list[tuple[float, int, int, Event]] = []
        self._seq = itertools.count()
        self.scheduled = 0
        self.dispatched = 0
        self.cancelled = 0
        self.trace: Optional[list[str]] = [] if trace else None

    @property
    def live(self) -> int:
        return self.scheduled - self.dispatched - self.cancelled

    def schedule(
        self,
        time: float,
        kind: EventKind,
        target: str = "",
        priority: Optional[int] = None,
        action: Optional[Callable[[Event], Any]] = None,
        payload: Any = None,
    ) -> EventHandle:
        if time < self.now:
            raise SchedulingInPast(f"event at t={time} is before clock t={self.now}")
        if priority is None:
            priority = KIND_PRIORITY.get(kind, DEFAULT_PRIORITY)
        if not PRIORITY_MIN <= priority <= PRIORITY_MAX:
            raise ValueError(f"priority {priority} outside {PRIORITY_MIN}..{PRIORITY_MAX}")
        seq = next(self._seq)
        ev = Event(id=seq, time=float(time), priority=int(priority), seq=seq,
                   kind=kind, target=str(target), action=action, payload=payload)
        heapq.heappush(self._heap, (ev.time, ev.priority, ev.seq, ev))
        self.scheduled += 1
        return EventHandle(self, ev)

    def schedule_in(self, delay: float, kind: EventKind, target: str = "", **kw) -> EventHandle:
        return self.schedule(self.now + delay, kind, target, **kw)

    def cancel(self, handle: EventHandle) -> CancelResult:
        if handle.engine is not self:
            raise UnknownHandle(f"handle for event {handle.event.id} belongs to another run")
        ev = handle.event
        if ev.state is EventState.LIVE:
            ev.state = EventState.CANCELLED
            self.cancelled += 1
            return CancelResult.CANCELLED
        return CancelResult.ALREADY_DISPATCHED

    def _discard_cancelled(self) -> None:
        heap = self._heap
        while heap and heap[0][3].state is EventState.CANCELLED:
            heapq.heappop(heap)

    def peek(self) -> Optional[Event]:
        self._discard_cancelled()
        return self._heap[0][3] if self._heap else None

    def step(self) -> Optional[Event]:
        """Dispatch the next event; ``None`` when the queue is empty."""
        self._discard_cancelled()
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)[3]
        self.now = ev.time
        ev.state = EventState.DISPATCHED
        self.dispatched += 1
        if self.trace is not None:
            self.trace.append(ev.trace_line())
        if ev.action is not None:
            try:
                ev.action(ev)
            except DispatchError:
                raise
            except Exception as exc:
                raise DispatchError(ev, exc) from exc
        return ev

    def run_until(self, t: float) -> int:
        """Dispatch every event with time <= t; returns how many fired."""
        if t < self.now:
            raise HorizonBehindClock(f"horizon t={t} is behind clock t={self.now}")
        count = 0
        while True:
            nxt = self.peek()
            if nxt is None or nxt.time > t:
                return count
            self.step()
            count += 1

    def run(self) -> int:
        count = 0
        while self.step() is not None:
            count += 1
        return count

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace or ())


# ---------------------------------------------------------------------------
# appointment calendars


class ConflictKind(Enum):
    DOUBLE_BOOKING = "DoubleBooking"
    RESOURCE_SHORTAGE = "ResourceShortage"


@dataclass(frozen=True)
class Rescheduled:
    new_start: float


@dataclass(frozen=True)
class Queued:
    position: int


@dataclass(frozen=True)
class ConflictReport:
    kind: ConflictKind
    events: tuple
    resolution: Rescheduled | Queued


@dataclass(frozen=True)
class Booking:
    resource: str
    start: float
    duration: float
    event_id: Any = None

    @property
    def end(self) -> float:
        return self.start + self.duration


class Calendar:
    """Committed, non-overlapping half-open intervals per resource."""

    def __init__(self):
        self._bookings: dict[str, list[Booking]] = {}

    def bookings(self, resource: str) -> list[Booking]:
        return list(self._bookings.get(resource, ()))

    def resources(self) -> Iterable[str]:
        return self._bookings.keys()

    def book(self, candidate: Booking) -> tuple[Booking, Optional[ConflictReport]]:
        """Commit ``candidate``, moved to the earliest free gap if it collides."""
        report = detect_conflict(candidate, self)
        if report is not None:
            candidate = Booking(candidate.resource, report.resolution.new_start,
                                candidate.duration, candidate.event_id)
        slots = self._bookings.setdefault(candidate.resource, [])
        bisect.insort(slots, candidate, key=lambda b: b.start)
        return candidate, report


def _overlaps(a_start: float, a_end: float, b: Booking) -> bool:
    return a_start < b.end and b.start < a_end


def detect_conflict(candidate: Booking, calendar: Calendar) -> Optional[ConflictReport]:
    slots = calendar._bookings.get(candidate.resource, ())
    clashing = [b for b in slots if _overlaps(candidate.start, candidate.end, b)]
    if not clashing:
        return None
    start = candidate.start
    for b in slots:
        if b.end <= start:
            continue
        if start + candidate.duration <= b.start:
            break
        start = max(start, b.end)
    ids = (candidate.event_id,) + tuple(b.event_id for b in clashing)
    return ConflictReport(ConflictKind.DOUBLE_BOOKING, ids, Rescheduled(start))
