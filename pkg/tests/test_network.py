from __future__ import annotations

from typing import List

import pytest

from bloatsim.engine import Prng, Simulator, ms
from bloatsim.network import CbrSource, Link, Router, transmission_time
from bloatsim.packet import Flow, Packet
from bloatsim.qdisc import Admission, DisciplineConfig, DropTail, build_discipline


def test_serialization_at_one_megabit() -> None:
    assert transmission_time(1458, 1_000_000) == ms(11.664)


def test_idle_gigabit_link_arrival(make_packet) -> None:
    link = Link("A", 1_000_000_000, ms(1))
    assert link.transmit(make_packet(), 0) == ms(1) + 11_664


def test_back_to_back_packets_spaced_by_serialization(make_packet) -> None:
    link = Link("C", 1_000_000, 0)
    first = link.transmit(make_packet(), 0)
    second = link.transmit(make_packet(), 0)
    assert second - first == ms(11.664)


def test_jittered_link_never_reorders(make_packet) -> None:
    link = Link("A", 1_000_000_000, ms(10), jitter_fraction=0.5, prng=Prng(3))
    arrivals = [link.transmit(make_packet(), t * 1000) for t in range(2000)]
    assert arrivals == sorted(arrivals)
    assert all(a >= t * 1000 + ms(10) for t, a in enumerate(arrivals))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"rate_bps": 0, "base_delay": 0},
        {"rate_bps": 1, "base_delay": -1},
        {"rate_bps": 1, "base_delay": 0, "jitter_fraction": 1.0},
        {"rate_bps": 1, "base_delay": 0, "jitter_fraction": 0.1},
    ],
)
def test_link_validation(kwargs) -> None:
    with pytest.raises(ValueError):
        Link("bad", **kwargs)


def _router(sim: Simulator, limit: int = 100, qdisc: str = "droptail"):
    delivered: List[Packet] = []
    router = Router(
        sim,
        build_discipline(qdisc, DisciplineConfig(limit=limit)),
        Link("C", 1_000_000, ms(1)),
        delivered.append,
    )
    return router, delivered


def test_router_admits_until_limit(sim: Simulator, make_packet) -> None:
    router, _ = _router(sim, limit=100)
    # the first packet goes straight to the wire, so 101 arrivals fill the queue
    results = [router.enqueue(make_packet()) for _ in range(101)]
    assert results.count(Admission.ENQUEUED) == 101
    assert router.resident == 100
    assert router.enqueue(make_packet()) is Admission.DROPPED


def test_idle_router_serves_immediately(sim: Simulator, make_packet) -> None:
    router, delivered = _router(sim)
    sim.schedule_at(ms(2), lambda: router.enqueue(make_packet()))
    sim.run_until_idle()
    assert len(delivered) == 1
    assert sim.now == ms(2) + ms(11.664) + ms(1)


def test_router_is_work_conserving_and_conserves_packets(sim: Simulator, make_packet) -> None:
    router, delivered = _router(sim, limit=10)
    for i in range(30):
        sim.schedule_at(i * ms(2), lambda: router.enqueue(make_packet()))

    def check() -> None:
        discipline = router.qdisc
        assert router.admitted == router.dequeued + router.dropped_by_discipline + router.resident
        assert discipline.admitted + discipline.dropped_on_admit == make_packet.next_id

    for t in range(0, 600, 7):
        sim.schedule_at(ms(t), check)
    sim.run_until_idle()
    assert len(delivered) == router.dequeued
    assert router.resident == 0
    assert not router.busy


def test_bottleneck_rate_never_exceeded(sim: Simulator, make_packet) -> None:
    router, delivered = _router(sim)
    arrivals: List[int] = []
    router._deliver = lambda pkt: (arrivals.append(sim.now), delivered.append(pkt))
    for _ in range(50):
        router.enqueue(make_packet())
    sim.run_until_idle()
    gaps = [b - a for a, b in zip(arrivals, arrivals[1:])]
    assert min(gaps) >= ms(11.664)


def test_cbr_gap() -> None:
    sim = Simulator()
    cbr = CbrSource(sim, 250_000, 1458, Link("D", 1_000_000_000, 0), lambda pkt: None, iter(range(10**6)))
    assert cbr.gap == ms(46.656)


def test_cbr_emits_at_exact_gap() -> None:
    sim = Simulator()
    sent_at: List[int] = []
    cbr = CbrSource(sim, 250_000, 1458, Link("D", 1_000_000_000, 0), lambda pkt: sent_at.append(pkt.sent_at), iter(range(10**6)))
    cbr.start(0)
    sim.run_until_idle(horizon=ms(46.656) * 10)
    assert sent_at == [i * ms(46.656) for i in range(11)]
    assert all(isinstance(t, int) for t in sent_at)


def test_cbr_zero_rate_schedules_nothing(sim: Simulator) -> None:
    cbr = CbrSource(sim, 0, 1458, Link("D", 1_000_000_000, 0), lambda pkt: None, iter(range(10)))
    cbr.start(0)
    assert sim.scheduled == 0


def test_cbr_stops_ticking(sim: Simulator) -> None:
    received: List[Packet] = []
    cbr = CbrSource(sim, 250_000, 1458, Link("D", 1_000_000_000, 0), received.append, iter(range(10**6)))
    cbr.start(0)
    sim.schedule_at(ms(100), cbr.stop)
    sim.run_until_idle()
    assert cbr.sent == 3
    assert all(pkt.flow is Flow.UDP_CBR for pkt in received)


def test_droptail_never_drops_at_dequeue(sim: Simulator, make_packet) -> None:
    router, _ = _router(sim, limit=5)
    for i in range(200):
        sim.schedule_at(i * ms(1), lambda: router.enqueue(make_packet()))
    sim.run_until_idle()
    assert isinstance(router.qdisc, DropTail)
    assert router.dropped_by_discipline == 0
    assert router.qdisc.dropped_on_admit > 0
