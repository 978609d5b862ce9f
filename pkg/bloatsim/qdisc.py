"""Queue disciplines hosted by the router: DropTail, CoDel, CoDel-LIFO and the FQ variants.

Every discipline shares the same interface: ``admit`` on packet arrival and
``dequeue`` whenever the egress link is free. CoDel-family disciplines
decide drops at dequeue time from the packet sojourn time.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Type

from .engine import SimTime, ms
from .packet import Flow, Packet


class Admission(str, Enum):
    ENQUEUED = "enqueued"
    DROPPED = "dropped"


@dataclass(frozen=True)
class DisciplineConfig:
    """Parameters shared by all disciplines.

    ``target`` is CoDel's tau and ``interval`` its lambda.
    """

    limit: int = 100
    target: SimTime = ms(5)
    interval: SimTime = ms(100)
    quantum: int = 1514
    flow_buckets: int = 3

    def __post_init__(self) -> None:
        if self.limit < 1:
            raise ValueError(f"limit must be >= 1, got {self.limit}")
        if self.target <= 0:
            raise ValueError(f"target must be positive, got {self.target}")
        if self.interval <= 0:
            raise ValueError(f"interval must be positive, got {self.interval}")
        if self.quantum <= 0:
            raise ValueError(f"quantum must be positive, got {self.quantum}")
        if self.flow_buckets < 1:
            raise ValueError(f"flow_buckets must be >= 1, got {self.flow_buckets}")


@dataclass
class CoDelState:
    dropping: bool = False
    n_drop: int = 1
    next_drop_at: SimTime = 0
    first_above_at: Optional[SimTime] = None


@dataclass
class LifoForgivenessState:
    """Sojourn statistics that decide whether CoDel-LIFO forgives a drop.

    Statistics accumulate across consecutive dequeues whose sojourn is at or
    above target and are cleared together as soon as one falls below it.
    """

    delta_max: SimTime = 0
    delta_sum: SimTime = 0
    n_samples: int = 0
    prev_delta: Optional[SimTime] = None
    k: int = 0

    def observe(self, delta: SimTime) -> None:
        self.delta_max = max(self.delta_max, delta)
        self.delta_sum += delta
        self.n_samples += 1
        if self.prev_delta is not None and delta - self.prev_delta > 0:
            self.k += 1
        else:
            self.k = 0
        self.prev_delta = delta

    def reset(self) -> None:
        self.delta_max = 0
        self.delta_sum = 0
        self.n_samples = 0
        self.prev_delta = None
        self.k = 0

    @property
    def mean(self) -> Optional[float]:
        if self.n_samples == 0:
            return None
        return self.delta_sum / self.n_samples

    @property
    def theta(self) -> float:
        """delta_max over the mean sojourn; infinite while the mean is undefined or zero."""
        if self.n_samples == 0 or self.delta_sum == 0:
            return math.inf
        return self.delta_max * self.n_samples / self.delta_sum

    def exceeds_theta(self) -> bool:
        """k > theta, evaluated in exact integer arithmetic."""
        if self.n_samples == 0 or self.delta_sum == 0:
            return False
        return self.k * self.delta_sum > self.delta_max * self.n_samples


@dataclass
class DequeueOutcome:
    delivered: Optional[Packet] = None
    dropped: List[Packet] = field(default_factory=list)
    sojourn_of_delivered: Optional[SimTime] = None


def sojourn(pkt: Packet, now: SimTime) -> SimTime:
    """Time the packet spent in the queue (dequeue time minus enqueue time)."""
    if pkt.enq is None:
        raise ValueError(f"packet {pkt.id} has no enqueue timestamp")
    if now < pkt.enq:
        raise ValueError(f"packet {pkt.id} dequeued at {now} before its enqueue at {pkt.enq}")
    return now - pkt.enq


class Discipline(ABC):
    """Common admission, bookkeeping and counters for every discipline."""

    name: str = ""
    measures_sojourn: bool = True

    def __init__(self, config: DisciplineConfig) -> None:
        self.config = config
        self.admitted = 0
        self.delivered = 0
        self.dropped_on_admit = 0
        self.dropped_on_dequeue = 0
        self._count = 0
        self._bytes = 0

    def admit(self, pkt: Packet, now: SimTime) -> Admission:
        if self._count >= self.config.limit:
            self.dropped_on_admit += 1
            return Admission.DROPPED
        pkt.enq = now
        self._store(pkt)
        self._count += 1
        self._bytes += pkt.size
        self.admitted += 1
        return Admission.ENQUEUED

    def occupancy(self) -> int:
        return self._count

    def occupancy_bytes(self) -> int:
        return self._bytes

    @property
    def drops(self) -> int:
        return self.dropped_on_admit + self.dropped_on_dequeue

    @abstractmethod
    def _store(self, pkt: Packet) -> None:
        ...

    @abstractmethod
    def _take(self) -> Packet:
        ...

    @abstractmethod
    def peek(self) -> Optional[Packet]:
        """Packet the next removal would yield, without removing it."""

    @abstractmethod
    def dequeue(self, now: SimTime) -> DequeueOutcome:
        ...

    def _remove(self) -> Packet:
        pkt = self._take()
        self._count -= 1
        self._bytes -= pkt.size
        return pkt

    def _deliver(self, pkt: Packet, delta: SimTime, dropped: List[Packet]) -> DequeueOutcome:
        self.delivered += 1
        return DequeueOutcome(delivered=pkt, dropped=dropped, sojourn_of_delivered=delta)

    def _drop(self, pkt: Packet, dropped: List[Packet]) -> None:
        self.dropped_on_dequeue += 1
        dropped.append(pkt)


class DropTail(Discipline):
    """Passive FIFO: drops arrivals when full, never at dequeue."""

    name = "droptail"
    measures_sojourn = False

    def __init__(self, config: DisciplineConfig) -> None:
        super().__init__(config)
        self._packets: Deque[Packet] = deque()

    def _store(self, pkt: Packet) -> None:
        self._packets.append(pkt)

    def _take(self) -> Packet:
        return self._packets.popleft()

    def peek(self) -> Optional[Packet]:
        return self._packets[0] if self._packets else None

    def dequeue(self, now: SimTime) -> DequeueOutcome:
        if not self._packets:
            return DequeueOutcome()
        pkt = self._remove()
        return self._deliver(pkt, sojourn(pkt, now), [])


class CoDel(Discipline):
    """CoDel over a FIFO.

    A packet becomes a drop candidate once sojourn has stayed above target
    for a whole interval; while dropping, drops are spaced interval/sqrt(n_drop)
    apart. Sojourn exactly equal to target neither resets nor drops.
    """

    name = "codel"

    def __init__(self, config: DisciplineConfig) -> None:
        super().__init__(config)
        self._packets: Deque[Packet] = deque()
        self.state = CoDelState()

    def _store(self, pkt: Packet) -> None:
        self._packets.append(pkt)

    def _take(self) -> Packet:
        return self._packets.popleft()

    def peek(self) -> Optional[Packet]:
        return self._packets[0] if self._packets else None

    def control_interval(self, n_drop: int) -> SimTime:
        return int(self.config.interval / math.sqrt(n_drop))

    def _ok_to_drop(self, delta: SimTime, now: SimTime) -> bool:
        state = self.state
        if delta == self.config.target:
            return False
        if state.first_above_at is None:
            state.first_above_at = now + self.config.interval
            return False
        return now >= state.first_above_at

    # Hooks for the LIFO variant.
    def _observe(self, delta: SimTime) -> None:
        pass

    def _reset_observations(self) -> None:
        pass

    def _permit_drop(self) -> bool:
        return True

    def dequeue(self, now: SimTime) -> DequeueOutcome:
        dropped: List[Packet] = []
        state = self.state
        while True:
            if self._count == 0:
                state.dropping = False
                state.first_above_at = None
                return DequeueOutcome(dropped=dropped)
            pkt = self._remove()
            delta = sojourn(pkt, now)
            if delta < self.config.target:
                state.first_above_at = None
                state.dropping = False
                state.n_drop = 1
                self._reset_observations()
                return self._deliver(pkt, delta, dropped)

            self._observe(delta)
            ok = self._ok_to_drop(delta, now)
            candidate = ok and (now >= state.next_drop_at if state.dropping else True)
            if not candidate or not self._permit_drop():
                return self._deliver(pkt, delta, dropped)

            if state.dropping:
                state.n_drop += 1
                state.next_drop_at += self.control_interval(state.n_drop)
            else:
                state.dropping = True
                state.n_drop = 1
                state.next_drop_at = now + self.control_interval(1)
            self._drop(pkt, dropped)


class CoDelLifo(CoDel):
    """CoDel over a stack with drop forgiveness.

    The newest packet is served first. A drop chosen by the CoDel rule is
    carried out only if k > theta; otherwise the packet is delivered and
    neither n_drop nor the drop schedule moves.
    """

    name = "codel-lifo"

    def __init__(self, config: DisciplineConfig) -> None:
        super().__init__(config)
        self._stack: List[Packet] = []
        self.forgiveness = LifoForgivenessState()
        self.forgiven = 0

    def _store(self, pkt: Packet) -> None:
        self._stack.append(pkt)

    def _take(self) -> Packet:
        return self._stack.pop()

    def peek(self) -> Optional[Packet]:
        return self._stack[-1] if self._stack else None

    def _observe(self, delta: SimTime) -> None:
        self.forgiveness.observe(delta)

    def _reset_observations(self) -> None:
        self.forgiveness.reset()

    def _permit_drop(self) -> bool:
        if self.forgiveness.exceeds_theta():
            return True
        self.forgiven += 1
        return False


class FqCoDel(Discipline):
    """Per-flow sub-queues, each with its own CoDel, served by deficit round robin.

    Flows are classified by the identity carried in the packet. The packet
    limit is global: an arrival that finds the whole discipline full is
    dropped.
    """

    name = "fq-codel"
    inner_class: Type[CoDel] = CoDel

    def __init__(self, config: DisciplineConfig) -> None:
        super().__init__(config)
        self._queues: Dict[Flow, CoDel] = {}
        self._deficits: Dict[Flow, int] = {}
        self._active: Deque[Flow] = deque()

    def subqueue(self, flow: Flow) -> Optional[CoDel]:
        return self._queues.get(flow)

    def deficit(self, flow: Flow) -> int:
        return self._deficits.get(flow, 0)

    def admit(self, pkt: Packet, now: SimTime) -> Admission:
        if self._count >= self.config.limit:
            self.dropped_on_admit += 1
            return Admission.DROPPED
        queue = self._queues.get(pkt.flow)
        if queue is None:
            if len(self._queues) >= self.config.flow_buckets:
                raise ValueError(
                    f"flow {pkt.flow.value} exceeds the {self.config.flow_buckets} configured flow buckets"
                )
            queue = self.inner_class(self.config)
            self._queues[pkt.flow] = queue
            self._deficits[pkt.flow] = 0
        queue.admit(pkt, now)
        self._count += 1
        self._bytes += pkt.size
        self.admitted += 1
        if pkt.flow not in self._active:
            self._active.append(pkt.flow)
        return Admission.ENQUEUED

    def _store(self, pkt: Packet) -> None:
        raise NotImplementedError("FqCoDel stores through its sub-queues")

    def _take(self) -> Packet:
        raise NotImplementedError("FqCoDel removes through its sub-queues")

    def peek(self) -> Optional[Packet]:
        for flow in self._active:
            head = self._queues[flow].peek()
            if head is not None:
                return head
        return None

    def dequeue(self, now: SimTime) -> DequeueOutcome:
        dropped: List[Packet] = []
        while self._active:
            flow = self._active[0]
            queue = self._queues[flow]
            head = queue.peek()
            if head is None:
                # lets the sub-queue run its own empty-queue reset
                queue.dequeue(now)
                self._retire(flow)
                continue
            if self._deficits[flow] < head.size:
                self._deficits[flow] += self.config.quantum
                self._active.rotate(-1)
                continue

            outcome = queue.dequeue(now)
            for pkt in outcome.dropped:
                self._count -= 1
                self._bytes -= pkt.size
                self._drop(pkt, dropped)
            if outcome.delivered is None:
                self._retire(flow)
                continue
            delivered = outcome.delivered
            self._count -= 1
            self._bytes -= delivered.size
            self._deficits[flow] -= delivered.size
            return self._deliver(delivered, outcome.sojourn_of_delivered or 0, dropped)
        return DequeueOutcome(dropped=dropped)

    def _retire(self, flow: Flow) -> None:
        self._active.popleft()
        self._deficits[flow] = 0


class FqCoDelLifo(FqCoDel):
    name = "fq-codel-lifo"
    inner_class = CoDelLifo


DISCIPLINES: Dict[str, Type[Discipline]] = {
    DropTail.name: DropTail,
    CoDel.name: CoDel,
    CoDelLifo.name: CoDelLifo,
    FqCoDel.name: FqCoDel,
    FqCoDelLifo.name: FqCoDelLifo,
}


def build_discipline(name: str, config: DisciplineConfig) -> Discipline:
    """Instantiate a discipline from its selection string."""
    try:
        discipline_class = DISCIPLINES[name]
    except KeyError:
        raise ValueError(
            f"unknown queue discipline '{name}', expected one of {', '.join(DISCIPLINES)}"
        ) from None
    return discipline_class(config)
