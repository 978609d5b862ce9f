from __future__ import annotations

import numpy as np
import pytest

from bloatsim.engine import Prng, SchedulingError, Simulator, ms, seconds, to_ms
from bloatsim.history import EventTrace


def test_time_helpers_are_integer_nanoseconds() -> None:
    assert ms(5) == 5_000_000
    assert seconds(1) == 1_000_000_000
    assert isinstance(ms(0.5), int)
    assert to_ms(ms(11.664)) == pytest.approx(11.664)


def test_event_fires_when_clock_reaches_it(sim: Simulator) -> None:
    fired = []
    sim.schedule_at(3, lambda: sim.schedule_at(5, lambda: fired.append(sim.now)))
    assert sim.run_until_idle() == 5
    assert fired == [5]


def test_equal_times_run_in_insertion_order(sim: Simulator) -> None:
    order = []
    sim.schedule_at(5, lambda: order.append("A"))
    sim.schedule_at(5, lambda: order.append("B"))
    sim.run_until_idle()
    assert order == ["A", "B"]


def test_scheduling_in_the_past_fails(sim: Simulator) -> None:
    sim.schedule_at(3, lambda: sim.schedule_at(2, lambda: None))
    with pytest.raises(SchedulingError):
        sim.run_until_idle()


def test_empty_queue_returns_zero(sim: Simulator) -> None:
    assert sim.run_until_idle() == 0


def test_events_execute_in_time_order(sim: Simulator) -> None:
    order = []
    for t in (1, 3, 2):
        sim.schedule_at(t, lambda t=t: order.append(t))
    assert sim.run_until_idle() == 3
    assert order == [1, 2, 3]


def test_cancelled_event_does_not_run_and_is_accounted(sim: Simulator) -> None:
    fired = []
    handle = sim.schedule_at(10, lambda: fired.append("cancelled"))
    sim.schedule_at(5, handle.cancel)
    sim.schedule_at(20, lambda: fired.append("kept"))
    sim.run_until_idle()
    assert fired == ["kept"]
    assert not handle.pending
    assert sim.executed + sim.cancelled == sim.scheduled


def test_executed_event_is_no_longer_pending(sim: Simulator) -> None:
    handle = sim.schedule_at(3, lambda: None)
    later = sim.schedule_at(7, lambda: None)
    sim.run_until_idle(horizon=5)
    assert not handle.pending
    assert later.pending
    handle.cancel()
    assert sim.cancelled == 0
    sim.run_until_idle()
    assert not later.pending
    assert sim.executed == sim.scheduled == 2


def test_stop_cancels_everything_pending(sim: Simulator) -> None:
    sim.schedule_at(1, sim.stop)
    for t in range(2, 10):
        sim.schedule_at(t, lambda: pytest.fail("ran after stop"))
    sim.run_until_idle()
    assert sim.now == 1
    assert sim.pending == 0
    assert sim.executed + sim.cancelled == sim.scheduled


def test_horizon_leaves_later_events_queued(sim: Simulator) -> None:
    sim.schedule_at(5, lambda: None)
    sim.schedule_at(50, lambda: None)
    assert sim.run_until_idle(horizon=10) == 5
    assert sim.pending == 1


def test_clock_is_monotonic_under_random_schedules(rng: np.random.Generator) -> None:
    for _ in range(200):
        sim = Simulator()
        seen = []

        def record() -> None:
            seen.append(sim.now)
            if rng.random() < 0.3:
                sim.schedule_in(int(rng.integers(0, 100)), record)

        for t in rng.integers(0, 1000, size=50):
            sim.schedule_at(int(t), record)
        sim.run_until_idle()
        assert seen == sorted(seen)
        assert sim.executed == sim.scheduled


def test_trace_records_executed_events() -> None:
    trace = EventTrace()
    sim = Simulator(trace)
    sim.schedule_at(ms(1), lambda: sim.note("hello"), "first")
    sim.schedule_at(ms(2), lambda: None, "second")
    sim.run_until_idle()
    text = trace.to_text()
    assert "first" in text and "second" in text and "hello" in text
    assert len(trace) == 3


def test_empty_trace_renders_placeholder() -> None:
    assert EventTrace().to_text() == "(No events executed.)"


def test_trace_truncates_at_max_records() -> None:
    trace = EventTrace(max_records=2)
    for i in range(5):
        trace.add_event(i, i, f"e{i}")
    assert len(trace) == 2
    assert trace.truncated
    assert "truncated" in trace.to_text()


def test_uniform_degenerate_interval() -> None:
    assert Prng(1).uniform(0.0, 0.0) == 0.0


def test_uniform_rejects_inverted_interval() -> None:
    with pytest.raises(ValueError):
        Prng(1).uniform(1.0, 0.0)


def test_same_seed_same_draws() -> None:
    a, b = Prng(12345), Prng(12345)
    assert [a.uniform(0.0, 1.0) for _ in range(1000)] == [b.uniform(0.0, 1.0) for _ in range(1000)]


def test_different_seeds_differ() -> None:
    a, b = Prng(1), Prng(2)
    assert [a.uniform(0.0, 1.0) for _ in range(10)] != [b.uniform(0.0, 1.0) for _ in range(10)]


def test_uniform_mean_and_range() -> None:
    prng = Prng(7)
    draws = np.array([prng.uniform(0.0, 1.0) for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 0.01
    assert draws.min() >= 0.0 and draws.max() < 1.0


def test_negative_seed_rejected() -> None:
    with pytest.raises(ValueError):
        Prng(-1)
