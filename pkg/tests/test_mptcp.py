from __future__ import annotations

import itertools
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np
import pytest

from bloatsim.engine import Simulator, ms
from bloatsim.mptcp import (
    CcAlgorithm,
    CouplingView,
    MptcpConnection,
    Phase,
    ReceiveBuffer,
    Subflow,
    alpha,
    decrease_on_loss,
    increase_per_ack,
)
from bloatsim.packet import Flow, Packet

MSS = 1418


# congestion control arithmetic


def test_alpha_single_subflow_is_one() -> None:
    assert alpha(CouplingView(windows=(7.3,), rtts=(0.042,))) == pytest.approx(1.0, rel=1e-12)


def test_alpha_identical_subflows() -> None:
    assert alpha(CouplingView(windows=(10.0, 10.0), rtts=(0.1, 0.1))) == pytest.approx(0.5, rel=1e-12)


def test_alpha_heterogeneous_example() -> None:
    view = CouplingView(windows=(8.0, 2.0), rtts=(0.05, 0.2))
    assert alpha(view) == pytest.approx(10 * 3200 / 170**2, rel=1e-12)
    assert alpha(view) == pytest.approx(1.1073, abs=1e-4)


def test_alpha_rejects_zero_rtt() -> None:
    with pytest.raises(ValueError):
        alpha(CouplingView(windows=(1.0, 2.0), rtts=(0.0, 0.1)))


def _alpha_exact(windows, rtts) -> Fraction:
    ws = [Fraction(w) for w in windows]
    rs = [Fraction(r) for r in rtts]
    best = max(w / (r * r) for w, r in zip(ws, rs))
    denominator = sum(w / r for w, r in zip(ws, rs))
    return sum(ws) * best / (denominator * denominator)


def test_alpha_matches_exact_rational_evaluation(rng: np.random.Generator) -> None:
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        windows = tuple(float(w) for w in rng.uniform(1.0, 64.0, size=n))
        rtts = tuple(float(r) for r in rng.uniform(1e-3, 1.5, size=n))
        exact = _alpha_exact(windows, rtts)
        assert abs(Fraction(alpha(CouplingView(windows, rtts))) - exact) <= exact * Fraction(1, 10**12)


def test_increase_examples() -> None:
    single = CouplingView(windows=(10.0,), rtts=(0.1,))
    assert increase_per_ack(CcAlgorithm.LIA, single, 0) == pytest.approx(0.1)
    twins = CouplingView(windows=(10.0, 10.0), rtts=(0.1, 0.1))
    assert increase_per_ack(CcAlgorithm.RTT_COMPENSATOR, twins, 0) == pytest.approx(0.025)
    assert increase_per_ack(CcAlgorithm.FULLY_COUPLED, twins, 1) == pytest.approx(1 / 20)
    assert increase_per_ack(CcAlgorithm.UNCOUPLED, CouplingView(windows=(4.0, 9.0), rtts=(0.1, 0.3)), 0) == 0.25


@pytest.mark.parametrize("algorithm", list(CcAlgorithm))
def test_single_subflow_reduces_to_standard_tcp(algorithm: CcAlgorithm) -> None:
    view = CouplingView(windows=(13.0,), rtts=(0.07,))
    assert increase_per_ack(algorithm, view, 0) == pytest.approx(1 / 13, rel=1e-12)


def test_rtt_compensator_never_exceeds_lia_or_uncoupled(rng: np.random.Generator) -> None:
    for _ in range(10_000):
        n = int(rng.integers(1, 4))
        view = CouplingView(
            windows=tuple(float(w) for w in rng.uniform(1.0, 46.0, size=n)),
            rtts=tuple(float(r) for r in rng.uniform(1e-3, 1.0, size=n)),
        )
        i = int(rng.integers(0, n))
        compensated = increase_per_ack(CcAlgorithm.RTT_COMPENSATOR, view, i)
        assert compensated <= increase_per_ack(CcAlgorithm.LIA, view, i)
        assert compensated <= increase_per_ack(CcAlgorithm.UNCOUPLED, view, i)


def test_parse_algorithm() -> None:
    assert CcAlgorithm.parse("rtt-compensator") is CcAlgorithm.RTT_COMPENSATOR
    with pytest.raises(ValueError):
        CcAlgorithm.parse("cubic")


def test_decrease_halves_window() -> None:
    subflow = Subflow(Flow.SUBFLOW_A, 0, MSS, initial_cwnd=10)
    assert decrease_on_loss(subflow) == 5.0
    assert subflow.phase is Phase.FAST_RECOVERY


def test_decrease_floors_at_one_mss() -> None:
    subflow = Subflow(Flow.SUBFLOW_A, 0, MSS, initial_cwnd=1.5)
    assert decrease_on_loss(subflow) == 1.0


def test_timeout_collapses_window() -> None:
    subflow = Subflow(Flow.SUBFLOW_A, 0, MSS, initial_cwnd=8)
    decrease_on_loss(subflow, timeout=True)
    assert (subflow.cwnd, subflow.ssthresh, subflow.phase) == (1.0, 4.0, Phase.SLOW_START)


def test_window_floor_holds_under_random_losses(rng: np.random.Generator) -> None:
    for _ in range(10_000):
        subflow = Subflow(Flow.SUBFLOW_A, 0, MSS, initial_cwnd=float(rng.uniform(1.0, 46.0)))
        for _ in range(5):
            decrease_on_loss(subflow, timeout=bool(rng.random() < 0.3))
            assert subflow.cwnd >= 1.0


def test_rtt_estimator() -> None:
    subflow = Subflow(Flow.SUBFLOW_A, 0, MSS)
    subflow.sample_rtt(ms(100))
    assert (subflow.srtt, subflow.rttvar) == (ms(100), ms(50))
    assert subflow.rto == ms(300)
    subflow.sample_rtt(ms(20))
    assert subflow.rttvar == (3 * ms(50) + ms(80)) // 4
    assert subflow.srtt == (7 * ms(100) + ms(20)) // 8


# sender state machine


class Harness:
    """A connection whose packets are captured instead of sent, with ACKs injected by hand."""

    def __init__(
        self,
        algorithm: CcAlgorithm = CcAlgorithm.UNCOUPLED,
        workload: int = 200 * MSS,
        rcv_window: int = 65536,
        initial_cwnd: float = 2.0,
        flows: Tuple[Flow, ...] = (Flow.SUBFLOW_A,),
    ) -> None:
        self.sim = Simulator()
        self.sent: List[Tuple[Subflow, Packet]] = []
        cap = rcv_window / MSS
        self.subflows = [Subflow(flow, i, MSS, initial_cwnd, cap) for i, flow in enumerate(flows)]
        self.connection = MptcpConnection(
            self.sim,
            algorithm,
            self.subflows,
            workload,
            rcv_window,
            40,
            self._transmit,
            itertools.count(),
        )

    def _transmit(self, subflow: Subflow, pkt: Packet) -> None:
        if not pkt.retransmitted:
            assert subflow.bytes_in_flight <= subflow.window_bytes
            assert self.connection.data_next - self.connection.data_una <= self.connection.rcv_window
        self.sent.append((subflow, pkt))

    def take(self) -> List[Packet]:
        packets = [pkt for _, pkt in self.sent]
        self.sent.clear()
        return packets

    def ack(self, subflow: Subflow, subflow_ack: int, data_ack: int, echo: Optional[Packet] = None) -> None:
        ack = Packet(
            id=-1,
            flow=Flow.ACK,
            size=40,
            acked_flow=subflow.flow,
            subflow_ack=subflow_ack,
            data_ack=data_ack,
            echo_sent_at=echo.sent_at if echo else self.sim.now,
            echo_subflow_seq=echo.subflow_seq if echo else 0,
            echo_retransmitted=echo.retransmitted if echo else False,
        )
        self.connection.on_ack(subflow, ack)

    def ack_packet(self, pkt: Packet) -> None:
        subflow = next(s for s in self.subflows if s.flow is pkt.flow)
        self.ack(subflow, pkt.subflow_seq + pkt.payload, pkt.seq + pkt.payload, pkt)


def test_slow_start_doubles_per_round() -> None:
    harness = Harness(initial_cwnd=1.0)
    subflow = harness.subflows[0]
    harness.connection.establish(subflow, ms(10))
    windows = []
    for _ in range(5):
        windows.append(subflow.cwnd)
        for pkt in harness.take():
            harness.ack_packet(pkt)
    assert windows == [1.0, 2.0, 4.0, 8.0, 16.0]


def _in_avoidance(window: float) -> Harness:
    harness = Harness(initial_cwnd=window)
    subflow = harness.subflows[0]
    subflow.phase = Phase.CONGESTION_AVOIDANCE
    subflow.ssthresh = window
    harness.connection.establish(subflow, ms(10))
    return harness


def test_three_dupacks_trigger_fast_retransmit() -> None:
    harness = _in_avoidance(12.0)
    subflow = harness.subflows[0]
    assert len(harness.take()) == 12
    for _ in range(3):
        harness.ack(subflow, 0, 0)
    resent = harness.take()
    assert [(p.subflow_seq, p.retransmitted) for p in resent] == [(0, True)]
    assert subflow.cwnd == 6.0
    assert subflow.phase is Phase.FAST_RECOVERY
    assert subflow.fast_retransmits == 1


def test_new_ack_resets_dupacks() -> None:
    harness = _in_avoidance(12.0)
    subflow = harness.subflows[0]
    harness.take()
    harness.ack(subflow, 0, 0)
    harness.ack(subflow, 0, 0)
    assert subflow.dup_acks == 2
    harness.ack(subflow, MSS, MSS)
    assert subflow.dup_acks == 0


def test_ack_advancing_connection_data_is_not_a_dupack() -> None:
    harness = _in_avoidance(12.0)
    subflow = harness.subflows[0]
    harness.take()
    harness.connection.data_una = 0
    harness.ack(subflow, 0, MSS)
    assert subflow.dup_acks == 0


def test_fast_recovery_partial_then_full_ack() -> None:
    harness = _in_avoidance(12.0)
    subflow = harness.subflows[0]
    harness.take()
    for _ in range(3):
        harness.ack(subflow, 0, 0)
    harness.take()
    recover = subflow.recover
    assert recover == 12 * MSS
    # partial ACK: the second segment is the next hole
    harness.ack(subflow, MSS, MSS)
    assert subflow.phase is Phase.FAST_RECOVERY
    assert [p.subflow_seq for p in harness.take() if p.retransmitted] == [MSS]
    harness.ack(subflow, recover, recover)
    assert subflow.phase is Phase.CONGESTION_AVOIDANCE
    assert subflow.inflation == 0.0
    assert subflow.cwnd == 6.0


def test_timeout_retransmits_once_and_backs_off() -> None:
    harness = Harness(initial_cwnd=1.0)
    subflow = harness.subflows[0]
    harness.connection.establish(subflow, ms(10))
    assert len(harness.take()) == 1
    harness.sim.run_until_idle(horizon=ms(1500))
    retransmissions = harness.take()
    assert [p.sent_at for p in retransmissions] == [ms(200), ms(600), ms(1400)]
    assert all(p.retransmitted and p.subflow_seq == 0 for p in retransmissions)
    assert (subflow.cwnd, subflow.phase, subflow.timeouts) == (1.0, Phase.SLOW_START, 3)


def test_ack_before_deadline_rearms_timer() -> None:
    harness = Harness(initial_cwnd=2.0)
    subflow = harness.subflows[0]
    harness.connection.establish(subflow, ms(10))
    first, _second = harness.take()
    harness.sim.schedule_at(ms(50), lambda: harness.ack_packet(first))
    harness.sim.run_until_idle(horizon=ms(240))
    assert not any(p.retransmitted for p in harness.take())
    assert subflow.rto_deadline == ms(50) + subflow.rto
    assert subflow.timeouts == 0


def test_karn_rule_skips_retransmitted_samples() -> None:
    harness = Harness(initial_cwnd=2.0)
    subflow = harness.subflows[0]
    harness.connection.establish(subflow, ms(10))
    fresh, resent = harness.take()
    resent.retransmitted = True
    harness.sim.schedule_at(ms(30), lambda: harness.ack_packet(fresh))
    harness.sim.schedule_at(ms(40), lambda: harness.ack_packet(resent))
    harness.sim.run_until_idle(horizon=ms(45))
    assert subflow.rtt_samples == [ms(30)]


def test_late_original_of_a_resent_segment_gives_no_sample() -> None:
    harness = _in_avoidance(12.0)
    subflow = harness.subflows[0]
    sent = harness.take()
    for at, pkt in zip((20, 21, 22), sent[1:4]):
        harness.sim.schedule_at(ms(at), lambda pkt=pkt: harness.ack(subflow, 0, 0, pkt))
    harness.sim.run_until_idle(horizon=ms(30))
    [resent] = harness.take()
    assert resent.retransmitted and resent.subflow_seq == 0

    # the original leaves a stale queue long after the fast retransmit, then its copy follows
    harness.sim.schedule_at(ms(150), lambda: harness.ack(subflow, 4 * MSS, 4 * MSS, sent[0]))
    harness.sim.schedule_at(ms(160), lambda: harness.ack(subflow, 4 * MSS, 4 * MSS, resent))
    harness.sim.run_until_idle(horizon=ms(170))
    assert subflow.snd_una == 4 * MSS
    assert subflow.rtt_samples == [ms(20), ms(21), ms(22)]


def test_scheduler_fills_faster_path_first() -> None:
    harness = Harness(flows=(Flow.SUBFLOW_A, Flow.SUBFLOW_B))
    slow, fast = harness.subflows
    for subflow, rtt in ((slow, ms(100)), (fast, ms(10))):
        subflow.established = True
        subflow.sample_rtt(rtt)
    harness.connection.schedule_send()
    flows = [pkt.flow for pkt in harness.take()]
    assert flows == [Flow.SUBFLOW_B, Flow.SUBFLOW_B, Flow.SUBFLOW_A, Flow.SUBFLOW_A]


def test_receive_window_limits_sends() -> None:
    harness = Harness(initial_cwnd=10.0, rcv_window=2 * MSS)
    harness.subflows[0].cwnd = 10.0
    harness.connection.establish(harness.subflows[0], ms(10))
    assert len(harness.take()) == 2


def test_data_flows_on_path_with_window_space() -> None:
    harness = Harness(flows=(Flow.SUBFLOW_A, Flow.SUBFLOW_B))
    slow, fast = harness.subflows
    harness.connection.establish(fast, ms(10))
    assert len(harness.take()) == 2
    harness.connection.establish(slow, ms(100))
    assert {pkt.flow for pkt in harness.take()} == {Flow.SUBFLOW_A}


def test_coupled_increase_uses_both_subflows() -> None:
    harness = Harness(algorithm=CcAlgorithm.LIA, flows=(Flow.SUBFLOW_A, Flow.SUBFLOW_B), initial_cwnd=4.0)
    a, b = harness.subflows
    for subflow in (a, b):
        subflow.phase = Phase.CONGESTION_AVOIDANCE
        subflow.ssthresh = 4.0
    harness.connection.establish(a, ms(10))
    harness.connection.establish(b, ms(10))
    first = next(pkt for pkt in harness.take() if pkt.flow is Flow.SUBFLOW_A)
    harness.ack_packet(first)
    # two identical subflows: alpha = 1/2, W = 8
    assert a.cwnd == pytest.approx(4.0 + 0.5 / 8.0)


def test_completion_fires_callback_and_stops_timers() -> None:
    done = []
    harness = Harness(workload=3 * MSS, initial_cwnd=4.0)
    harness.connection._on_complete = lambda: done.append(True)
    subflow = harness.subflows[0]
    harness.connection.establish(subflow, ms(10))
    packets = harness.take()
    assert len(packets) == 3
    for pkt in packets:
        harness.ack_packet(pkt)
    assert done == [True]
    assert harness.connection.complete
    assert subflow.rto_deadline is None


# receiver


def _data(flow: Flow, index: int, subflow_index: Optional[int] = None) -> Packet:
    subflow_index = index if subflow_index is None else subflow_index
    return Packet(
        id=index, flow=flow, size=MSS + 40, seq=index * MSS, subflow_seq=subflow_index * MSS, payload=MSS, sent_at=0
    )


def test_receiver_in_order_acks() -> None:
    receiver = ReceiveBuffer(65536, itertools.count())
    acks = [receiver.on_data(_data(Flow.SUBFLOW_A, i), 0).data_ack // MSS for i in range(3)]
    assert acks == [1, 2, 3]


def test_receiver_hole_then_fill() -> None:
    receiver = ReceiveBuffer(65536, itertools.count())
    acks = [receiver.on_data(_data(Flow.SUBFLOW_A, i), i).data_ack // MSS for i in (0, 2, 3)]
    assert acks == [1, 1, 1]
    assert receiver.on_data(_data(Flow.SUBFLOW_A, 1), 5).data_ack // MSS == 4
    assert receiver.delivered_bytes == 4 * MSS
    assert receiver.last_delivery_at == 5


def test_slow_path_segment_unblocks_buffered_data() -> None:
    receiver = ReceiveBuffer(65536, itertools.count())
    for b_index, data_index in enumerate((1, 2, 3, 4)):
        ack = receiver.on_data(_data(Flow.SUBFLOW_B, data_index, b_index), 0)
        assert ack.data_ack == 0
        assert ack.subflow_ack == (b_index + 1) * MSS
        assert ack.echo_subflow_seq == b_index * MSS
    ack = receiver.on_data(_data(Flow.SUBFLOW_A, 0, 0), 7)
    assert ack.data_ack == 5 * MSS
    assert ack.acked_flow is Flow.SUBFLOW_A
    assert receiver.bytes_by_flow == {Flow.SUBFLOW_B: 4 * MSS, Flow.SUBFLOW_A: MSS}


def test_receiver_discards_beyond_capacity() -> None:
    receiver = ReceiveBuffer(2 * MSS, itertools.count())
    assert receiver.on_data(_data(Flow.SUBFLOW_A, 2), 0) is None
    assert receiver.discarded == 1


def test_receiver_duplicate_is_acked_not_counted() -> None:
    receiver = ReceiveBuffer(65536, itertools.count())
    receiver.on_data(_data(Flow.SUBFLOW_A, 0), 0)
    ack = receiver.on_data(_data(Flow.SUBFLOW_A, 0), 1)
    assert ack.data_ack == MSS
    assert receiver.delivered_bytes == MSS
    assert receiver.duplicates == 1


def test_receiver_delivers_random_interleavings_exactly_once(rng: np.random.Generator) -> None:
    for _ in range(500):
        receiver = ReceiveBuffer(10**9, itertools.count())
        order = rng.permutation(20)
        for index in order:
            receiver.on_data(_data(Flow.SUBFLOW_A, int(index)), 0)
        assert receiver.delivered_bytes == 20 * MSS
        assert receiver.next_expected == 20 * MSS
        assert receiver.buffered_bytes == 0
