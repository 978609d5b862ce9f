"""Deterministic discrete-event engine: clock, event queue and seeded PRNG.

Time is carried as integer nanoseconds everywhere in the simulator so that
event ordering and metric arithmetic are exactly reproducible.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .history import EventTrace


SimTime = int

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def ms(value: float) -> SimTime:
    """Convert milliseconds to simulated nanoseconds."""
    return int(round(value * NS_PER_MS))


def seconds(value: float) -> SimTime:
    """Convert seconds to simulated nanoseconds."""
    return int(round(value * NS_PER_S))


def to_ms(value: SimTime) -> float:
    return value / NS_PER_MS


def to_seconds(value: SimTime) -> float:
    return value / NS_PER_S


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


@dataclass(order=True)
class Event:
    """A callback bound to a point in simulated time.

    Ordering is (fire_at, seq); seq is the insertion ordinal, so events that
    fire at the same instant run in the order they were scheduled.
    """

    fire_at: SimTime
    seq: int
    action: Callable[[], None] = field(compare=False)
    label: str = field(compare=False, default="")
    cancelled: bool = field(compare=False, default=False)
    executed: bool = field(compare=False, default=False)


class EventHandle:
    """Cancellation handle returned by :meth:`Simulator.schedule`."""

    __slots__ = ("_event", "_sim")

    def __init__(self, event: Event, sim: "Simulator") -> None:
        self._event = event
        self._sim = sim

    @property
    def fire_at(self) -> SimTime:
        return self._event.fire_at

    @property
    def pending(self) -> bool:
        event = self._event
        return not event.cancelled and not event.executed

    def cancel(self) -> None:
        if self.pending:
            self._event.cancelled = True
            self._sim.cancelled += 1


class Simulator:
    """Single-threaded event loop over a heap of :class:`Event`."""

    def __init__(self, trace: Optional[EventTrace] = None) -> None:
        self._queue: List[Event] = []
        self._now: SimTime = 0
        self._next_seq = 0
        self._stopped = False
        self.trace = trace
        self.scheduled = 0
        self.executed = 0
        self.cancelled = 0

    @property
    def now(self) -> SimTime:
        return self._now

    @property
    def tracing(self) -> bool:
        return self.trace is not None

    @property
    def pending(self) -> int:
        return sum(1 for event in self._queue if not event.cancelled)

    def schedule_at(self, fire_at: SimTime, action: Callable[[], None], label: str = "") -> EventHandle:
        """Schedule ``action`` to run at absolute time ``fire_at``."""
        if fire_at < self._now:
            raise SchedulingError(
                f"cannot schedule '{label}' at t={fire_at} ns, clock is already at {self._now} ns"
            )
        event = Event(fire_at=fire_at, seq=self._next_seq, action=action, label=label)
        self._next_seq += 1
        return self.schedule(event)

    def schedule_in(self, delay: SimTime, action: Callable[[], None], label: str = "") -> EventHandle:
        return self.schedule_at(self._now + delay, action, label)

    def schedule(self, event: Event) -> EventHandle:
        """Enqueue a prepared event; its seq must come from this simulator."""
        if event.fire_at < self._now:
            raise SchedulingError(
                f"cannot schedule '{event.label}' at t={event.fire_at} ns, clock is already at {self._now} ns"
            )
        self._next_seq = max(self._next_seq, event.seq + 1)
        heapq.heappush(self._queue, event)
        self.scheduled += 1
        return EventHandle(event, self)

    def note(self, text: str) -> None:
        """Attach a component note to the trace, if one is being recorded."""
        if self.trace is not None:
            self.trace.add_note(self._now, text)

    def stop(self) -> None:
        """Cancel every pending event; the loop returns after the current one."""
        for event in self._queue:
            if not event.cancelled:
                event.cancelled = True
                self.cancelled += 1
        self._queue.clear()
        self._stopped = True

    def run_until_idle(self, horizon: Optional[SimTime] = None) -> SimTime:
        """Execute events in (fire_at, seq) order until none remain.

        With a ``horizon`` the loop also returns, leaving later events queued,
        as soon as the next event would fire after it.
        """
        queue = self._queue
        while queue and not self._stopped:
            event = queue[0]
            if horizon is not None and event.fire_at > horizon:
                break
            heapq.heappop(queue)
            if event.cancelled:
                continue
            self._now = event.fire_at
            event.executed = True
            self.executed += 1
            if self.trace is not None:
                self.trace.add_event(event.fire_at, event.seq, event.label)
            event.action()
        return self._now


class Prng:
    """Seeded generator on numpy's PCG64 (PCG XSL RR 128/64).

    PCG64 is a documented algorithm with a published reference sequence, and
    numpy's SeedSequence expands the 64-bit seed identically on every
    platform, so one seed reproduces the same draws everywhere.
    """

    def __init__(self, seed: int) -> None:
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = seed
        self._generator = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, lo: float, hi: float) -> float:
        """Draw from [lo, hi)."""
        if lo > hi:
            raise ValueError(f"uniform() needs lo <= hi, got lo={lo} hi={hi}")
        if lo == hi:
            return float(lo)
        return lo + (hi - lo) * float(self._generator.random())
