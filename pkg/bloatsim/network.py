"""Links, the shared router queue and the constant-bit-rate cross traffic."""
from __future__ import annotations

from typing import Callable, Iterator, Optional

from .engine import NS_PER_S, EventHandle, Prng, SimTime, Simulator
from .metrics import TimeWeightedAverage
from .packet import Flow, Packet
from .qdisc import Admission, DequeueOutcome, Discipline


Receiver = Callable[[Packet], None]


def transmission_time(size_bytes: int, rate_bps: int) -> SimTime:
    """Serialization time of ``size_bytes`` at ``rate_bps``, rounded up to the nanosecond."""
    return -(-size_bytes * 8 * NS_PER_S // rate_bps)


class Link:
    """Point-to-point link with rate, propagation delay and seeded jitter.

    Jitter is an additive per-packet delay drawn uniformly from
    [0, jitter_fraction * base_delay). Arrivals are clamped so packets on one
    link never overtake each other.
    """

    def __init__(
        self,
        name: str,
        rate_bps: int,
        base_delay: SimTime,
        jitter_fraction: float = 0.0,
        prng: Optional[Prng] = None,
    ) -> None:
        if rate_bps <= 0:
            raise ValueError(f"link {name}: rate must be positive, got {rate_bps}")
        if base_delay < 0:
            raise ValueError(f"link {name}: delay must be non-negative, got {base_delay}")
        if not 0.0 <= jitter_fraction < 1.0:
            raise ValueError(f"link {name}: jitter_fraction must be in [0, 1), got {jitter_fraction}")
        if jitter_fraction > 0.0 and prng is None:
            raise ValueError(f"link {name}: jitter needs a seeded Prng")
        self.name = name
        self.rate_bps = rate_bps
        self.base_delay = base_delay
        self.jitter_fraction = jitter_fraction
        self.busy_until: SimTime = 0
        self._prng = prng
        self._last_arrival: SimTime = 0

    def serialization_time(self, size_bytes: int) -> SimTime:
        return transmission_time(size_bytes, self.rate_bps)

    def _jitter(self) -> SimTime:
        if self.jitter_fraction == 0.0 or self.base_delay == 0 or self._prng is None:
            return 0
        return int(self._prng.uniform(0.0, self.jitter_fraction * self.base_delay))

    def transmit(self, pkt: Packet, now: SimTime) -> SimTime:
        """Put ``pkt`` on the wire and return its arrival time at the far end."""
        start = max(now, self.busy_until)
        self.busy_until = start + self.serialization_time(pkt.size)
        arrival = max(self.busy_until + self.base_delay + self._jitter(), self._last_arrival)
        self._last_arrival = arrival
        return arrival

    def forward(self, sim: Simulator, pkt: Packet, on_arrival: Receiver) -> SimTime:
        """Transmit and schedule ``on_arrival(pkt)`` at the far end."""
        arrival = self.transmit(pkt, sim.now)
        sim.schedule_at(arrival, lambda: on_arrival(pkt), f"{self.name}.arrive")
        return arrival


class QueueMonitor:
    """Time-weighted occupancy and sojourn samples of the router queue."""

    def __init__(self) -> None:
        self.occupancy = TimeWeightedAverage()
        self.sojourn_sum: SimTime = 0
        self.sojourn_count = 0

    def record_occupancy(self, now: SimTime, packets: int) -> None:
        self.occupancy.update(now, packets)

    def record_sojourn(self, delta: SimTime) -> None:
        self.sojourn_sum += delta
        self.sojourn_count += 1


class Router:
    """Hosts the shared queue discipline in front of the bottleneck egress.

    The router is work-conserving: it dequeues exactly when the egress link
    finishes serializing the previous packet, and as soon as a packet arrives
    at an idle router.
    """

    def __init__(
        self,
        sim: Simulator,
        qdisc: Discipline,
        egress: Link,
        deliver: Receiver,
        monitor: Optional[QueueMonitor] = None,
    ) -> None:
        self.sim = sim
        self.qdisc = qdisc
        self.egress = egress
        self._deliver = deliver
        self.monitor = monitor or QueueMonitor()
        self.busy = False
        self.monitor.record_occupancy(sim.now, 0)

    def enqueue(self, pkt: Packet) -> Admission:
        now = self.sim.now
        result = self.qdisc.admit(pkt, now)
        self.monitor.record_occupancy(now, self.qdisc.occupancy())
        if result is Admission.DROPPED:
            if self.sim.tracing:
                self.sim.note(f"router drop-on-admit {pkt.flow.value} id={pkt.id} seq={pkt.seq}")
            return result
        if self.sim.tracing:
            self.sim.note(f"router enqueue {pkt.flow.value} id={pkt.id} occupancy={self.qdisc.occupancy()}")
        if not self.busy:
            self._serve()
        return result

    def _serve(self) -> None:
        now = self.sim.now
        outcome: DequeueOutcome = self.qdisc.dequeue(now)
        self.monitor.record_occupancy(now, self.qdisc.occupancy())
        if self.sim.tracing:
            for pkt in outcome.dropped:
                self.sim.note(f"router drop-on-dequeue {pkt.flow.value} id={pkt.id} sojourn={now - (pkt.enq or now)}")
        pkt = outcome.delivered
        if pkt is None:
            self.busy = False
            return
        self.busy = True
        if outcome.sojourn_of_delivered is not None:
            self.monitor.record_sojourn(outcome.sojourn_of_delivered)
        self.egress.forward(self.sim, pkt, self._deliver)
        self.sim.schedule_at(self.egress.busy_until, self._serve, "router.egress-free")

    @property
    def admitted(self) -> int:
        return self.qdisc.admitted

    @property
    def dequeued(self) -> int:
        return self.qdisc.delivered

    @property
    def dropped_by_discipline(self) -> int:
        return self.qdisc.dropped_on_dequeue

    @property
    def resident(self) -> int:
        return self.qdisc.occupancy()


class CbrSource:
    """UDP constant-bit-rate source feeding the router over its own link."""

    def __init__(
        self,
        sim: Simulator,
        rate_bps: int,
        packet_size: int,
        link: Link,
        destination: Receiver,
        ids: Iterator[int],
    ) -> None:
        if rate_bps < 0:
            raise ValueError(f"CBR rate must be non-negative, got {rate_bps}")
        if packet_size <= 0:
            raise ValueError(f"CBR packet size must be positive, got {packet_size}")
        self.sim = sim
        self.rate_bps = rate_bps
        self.packet_size = packet_size
        self.link = link
        self._destination = destination
        self._ids = ids
        self.next_send: SimTime = 0
        self.sent = 0
        self.stopped = False
        self._handle: Optional[EventHandle] = None

    @property
    def gap(self) -> SimTime:
        return transmission_time(self.packet_size, self.rate_bps)

    def start(self, at: SimTime = 0) -> None:
        if self.rate_bps == 0:
            return
        self.next_send = at
        self._handle = self.sim.schedule_at(at, self.tick, "cbr.tick")

    def stop(self) -> None:
        self.stopped = True
        if self._handle is not None:
            self._handle.cancel()
            self._handle = None

    def tick(self) -> None:
        """Emit one packet and schedule the next tick one gap later."""
        if self.stopped:
            return
        now = self.sim.now
        pkt = Packet(id=next(self._ids), flow=Flow.UDP_CBR, size=self.packet_size, sent_at=now)
        self.link.forward(self.sim, pkt, self._destination)
        self.sent += 1
        self.next_send = now + self.gap
        self._handle = self.sim.schedule_at(self.next_send, self.tick, "cbr.tick")
