"""Multipath TCP endpoints: coupled congestion control, NewReno subflows and the shared receive buffer.

Each subflow keeps its own sequence space, so loss detection (dupACKs, fast
retransmit, RTO) runs per path. Data sequence numbers are connection-wide:
they drive in-order delivery at the receiver and the shared receive window
at the sender.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from .engine import EventHandle, SimTime, Simulator, ms, seconds
from .metrics import TimeWeightedAverage
from .packet import Flow, Packet

logger = logging.getLogger(__name__)

ACK_SIZE = 40
INITIAL_RTO = seconds(1)
MIN_RTO = ms(200)
MAX_RTO = seconds(60)
DUPACK_THRESHOLD = 3


class CcAlgorithm(str, Enum):
    LIA = "lia"
    RTT_COMPENSATOR = "rtt-compensator"
    UNCOUPLED = "uncoupled"
    FULLY_COUPLED = "fully-coupled"

    @classmethod
    def parse(cls, name: str) -> "CcAlgorithm":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(
                f"unknown congestion control '{name}', expected one of {', '.join(a.value for a in cls)}"
            ) from None


class Phase(str, Enum):
    SLOW_START = "slow-start"
    CONGESTION_AVOIDANCE = "congestion-avoidance"
    FAST_RECOVERY = "fast-recovery"


@dataclass(frozen=True)
class CouplingView:
    """Snapshot of (w_i, RTT_i) for every coupled subflow, taken at one instant."""

    windows: Tuple[float, ...]
    rtts: Tuple[float, ...]

    @property
    def total(self) -> float:
        return sum(self.windows)


def alpha(view: CouplingView) -> float:
    """Aggressiveness factor: W * max(w_i / RTT_i^2) / (sum(w_i / RTT_i))^2."""
    if not view.windows or len(view.windows) != len(view.rtts):
        raise ValueError("alpha needs one RTT per window and at least one subflow")
    if any(rtt <= 0 for rtt in view.rtts):
        raise ValueError(f"alpha needs positive RTTs, got {view.rtts}")
    total = view.total
    if total <= 0:
        raise ValueError(f"alpha needs a positive total window, got {total}")
    best = max(w / (rtt * rtt) for w, rtt in zip(view.windows, view.rtts))
    denominator = sum(w / rtt for w, rtt in zip(view.windows, view.rtts))
    return total * best / (denominator * denominator)


def increase_per_ack(algorithm: CcAlgorithm, view: CouplingView, index: int) -> float:
    """Congestion-avoidance window increase, in MSS, for one ACK on subflow ``index``."""
    own = view.windows[index]
    if algorithm is CcAlgorithm.UNCOUPLED:
        return 1.0 / own
    total = view.total
    if algorithm is CcAlgorithm.FULLY_COUPLED:
        return 1.0 / total
    linked = alpha(view) / total
    if algorithm is CcAlgorithm.LIA:
        return linked
    return min(linked, 1.0 / own)


@dataclass
class Segment:
    subflow_seq: int
    data_seq: int
    length: int
    sent_at: SimTime = 0
    transmissions: int = 0
    retransmitted: bool = False


class Subflow:
    """Per-path sender state: window, RTT estimator, NewReno phase and unacked segments."""

    def __init__(
        self,
        flow: Flow,
        index: int,
        mss: int,
        initial_cwnd: float = 2.0,
        cwnd_cap: float = float("inf"),
    ) -> None:
        self.flow = flow
        self.index = index
        self.mss = mss
        self.cwnd_cap = cwnd_cap
        self.cwnd = min(float(initial_cwnd), cwnd_cap)
        self.ssthresh = cwnd_cap
        self.phase = Phase.SLOW_START
        self.dup_acks = 0
        self.inflation = 0.0
        self.recover = 0
        self.srtt: SimTime = 0
        self.rttvar: SimTime = 0
        self.base_rto: SimTime = INITIAL_RTO
        self.backoff = 0
        self.snd_una = 0
        self.snd_nxt = 0
        self.snd_max = 0
        self.segments: Dict[int, Segment] = {}
        self.rto_handle: Optional[EventHandle] = None
        self.established = False
        self.rtt_samples: List[SimTime] = []
        self.cwnd_average = TimeWeightedAverage()
        self.retransmissions = 0
        self.fast_retransmits = 0
        self.timeouts = 0

    @property
    def bytes_in_flight(self) -> int:
        return self.snd_nxt - self.snd_una

    @property
    def window_bytes(self) -> float:
        return (self.cwnd + self.inflation) * self.mss

    @property
    def rto(self) -> SimTime:
        return min(self.base_rto << self.backoff, MAX_RTO)

    @property
    def rto_deadline(self) -> Optional[SimTime]:
        if self.rto_handle is None or not self.rto_handle.pending:
            return None
        return self.rto_handle.fire_at

    def sample_rtt(self, sample: SimTime) -> None:
        """Smoothed RTT with gain 1/8, variance gain 1/4, RTO = srtt + 4 rttvar (floor 200 ms)."""
        if self.srtt == 0:
            self.srtt = sample
            self.rttvar = sample // 2
        else:
            self.rttvar = (3 * self.rttvar + abs(self.srtt - sample)) // 4
            self.srtt = (7 * self.srtt + sample) // 8
        self.base_rto = min(max(MIN_RTO, self.srtt + 4 * self.rttvar), MAX_RTO)

    def clamp_window(self) -> None:
        self.cwnd = max(1.0, min(self.cwnd, self.cwnd_cap))


def decrease_on_loss(subflow: Subflow, timeout: bool = False) -> float:
    """Halve the window on a loss signal; a timeout also collapses it to one MSS."""
    subflow.ssthresh = max(subflow.cwnd / 2.0, 1.0)
    if timeout:
        subflow.cwnd = 1.0
        subflow.phase = Phase.SLOW_START
    else:
        subflow.cwnd = subflow.ssthresh
        subflow.phase = Phase.FAST_RECOVERY
    return subflow.cwnd


class ReceiveBuffer:
    """Receiver side: per-subflow cumulative ACKs plus connection-level reassembly.

    Every data arrival produces one ACK on the arrival subflow carrying the
    subflow cumulative ACK, the connection cumulative ACK (next expected data
    byte) and an echo of the triggering packet's send time and subflow
    sequence number.
    """

    def __init__(self, capacity: int, ids: Iterator[int], ack_size: int = ACK_SIZE) -> None:
        if capacity <= 0:
            raise ValueError(f"receive buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._ids = ids
        self.ack_size = ack_size
        self.next_expected = 0
        self.delivered_bytes = 0
        self.first_delivery_at: Optional[SimTime] = None
        self.last_delivery_at: Optional[SimTime] = None
        self.bytes_by_flow: Dict[Flow, int] = {}
        self.discarded = 0
        self.duplicates = 0
        self._out_of_order: Dict[int, int] = {}
        self._subflow_next: Dict[Flow, int] = {}
        self._subflow_out_of_order: Dict[Flow, Dict[int, int]] = {}

    @property
    def buffered_bytes(self) -> int:
        return sum(self._out_of_order.values())

    def subflow_ack(self, flow: Flow) -> int:
        return self._subflow_next.get(flow, 0)

    def on_data(self, pkt: Packet, now: SimTime) -> Optional[Packet]:
        end = pkt.seq + pkt.payload
        if end > self.next_expected + self.capacity:
            self.discarded += 1
            return None

        self._advance_subflow(pkt)

        if pkt.seq < self.next_expected or pkt.seq in self._out_of_order:
            self.duplicates += 1
        else:
            self.bytes_by_flow[pkt.flow] = self.bytes_by_flow.get(pkt.flow, 0) + pkt.payload
            if pkt.seq == self.next_expected:
                self._deliver(pkt.payload, now)
                while self.next_expected in self._out_of_order:
                    self._deliver(self._out_of_order.pop(self.next_expected), now)
            else:
                self._out_of_order[pkt.seq] = pkt.payload

        return Packet(
            id=next(self._ids),
            flow=Flow.ACK,
            size=self.ack_size,
            sent_at=now,
            acked_flow=pkt.flow,
            data_ack=self.next_expected,
            subflow_ack=self._subflow_next[pkt.flow],
            echo_sent_at=pkt.sent_at,
            echo_subflow_seq=pkt.subflow_seq,
            echo_retransmitted=pkt.retransmitted,
        )

    def _advance_subflow(self, pkt: Packet) -> None:
        expected = self._subflow_next.get(pkt.flow, 0)
        pending = self._subflow_out_of_order.setdefault(pkt.flow, {})
        if pkt.subflow_seq == expected:
            expected += pkt.payload
            while expected in pending:
                expected += pending.pop(expected)
        elif pkt.subflow_seq > expected:
            pending[pkt.subflow_seq] = pkt.payload
        self._subflow_next[pkt.flow] = expected

    def _deliver(self, length: int, now: SimTime) -> None:
        self.next_expected += length
        self.delivered_bytes += length
        if self.first_delivery_at is None:
            self.first_delivery_at = now
        self.last_delivery_at = now


Transmit = Callable[[Subflow, Packet], None]


class MptcpConnection:
    """Sender side of one MPTCP connection striping a fixed workload over its subflows."""

    def __init__(
        self,
        sim: Simulator,
        algorithm: CcAlgorithm,
        subflows: Sequence[Subflow],
        workload_bytes: int,
        rcv_window: int,
        header_bytes: int,
        transmit: Transmit,
        ids: Iterator[int],
        on_complete: Optional[Callable[[], None]] = None,
    ) -> None:
        if workload_bytes <= 0:
            raise ValueError(f"workload must be positive, got {workload_bytes}")
        self.sim = sim
        self.algorithm = algorithm
        self.subflows = list(subflows)
        self.workload_bytes = workload_bytes
        self.rcv_window = rcv_window
        self.header_bytes = header_bytes
        self._transmit = transmit
        self._ids = ids
        self._on_complete = on_complete
        self.data_next = 0
        self.data_una = 0
        self.completed_at: Optional[SimTime] = None

    @property
    def complete(self) -> bool:
        return self.completed_at is not None

    def establish(self, subflow: Subflow, handshake_rtt: SimTime) -> None:
        """Mark a subflow usable; the handshake exchange seeds its RTT estimator."""
        subflow.established = True
        if handshake_rtt > 0:
            subflow.sample_rtt(handshake_rtt)
        subflow.cwnd_average.update(self.sim.now, subflow.cwnd)
        if self.sim.tracing:
            self.sim.note(f"{subflow.flow.value} established srtt={subflow.srtt}")
        self.schedule_send()

    def coupling_view(self, subflow: Subflow) -> Tuple[CouplingView, int]:
        coupled = [s for s in self.subflows if s.established and s.srtt > 0]
        view = CouplingView(
            windows=tuple(s.cwnd for s in coupled),
            rtts=tuple(float(s.srtt) for s in coupled),
        )
        return view, coupled.index(subflow)

    def schedule_send(self) -> List[Packet]:
        """Fill subflows in ascending smoothed-RTT order within cwnd and the shared receive window."""
        sent: List[Packet] = []
        if self.complete:
            return sent
        ready = sorted((s for s in self.subflows if s.established), key=lambda s: (s.srtt, s.index))
        for subflow in ready:
            while True:
                pkt = self._next_packet(subflow)
                if pkt is None:
                    break
                sent.append(pkt)
        return sent

    def _next_packet(self, subflow: Subflow) -> Optional[Packet]:
        window = subflow.window_bytes
        if subflow.snd_nxt < subflow.snd_max:
            segment = subflow.segments[subflow.snd_nxt]
            if subflow.bytes_in_flight + segment.length > window:
                return None
            return self._send_segment(subflow, segment)

        length = min(subflow.mss, self.workload_bytes - self.data_next)
        if length <= 0:
            return None
        if subflow.bytes_in_flight + length > window:
            return None
        if self.data_next + length - self.data_una > self.rcv_window:
            return None
        segment = Segment(subflow_seq=subflow.snd_max, data_seq=self.data_next, length=length)
        subflow.segments[segment.subflow_seq] = segment
        subflow.snd_max += length
        self.data_next += length
        return self._send_segment(subflow, segment)

    def _send_segment(self, subflow: Subflow, segment: Segment) -> Packet:
        now = self.sim.now
        if segment.transmissions > 0:
            segment.retransmitted = True
            subflow.retransmissions += 1
        segment.transmissions += 1
        segment.sent_at = now
        if segment.subflow_seq == subflow.snd_nxt:
            subflow.snd_nxt += segment.length
        pkt = Packet(
            id=next(self._ids),
            flow=subflow.flow,
            size=segment.length + self.header_bytes,
            seq=segment.data_seq,
            subflow_seq=segment.subflow_seq,
            payload=segment.length,
            sent_at=now,
            retransmitted=segment.retransmitted,
        )
        if self.sim.tracing:
            kind = "retransmit" if segment.retransmitted else "send"
            self.sim.note(
                f"{subflow.flow.value} {kind} sseq={segment.subflow_seq} dseq={segment.data_seq} "
                f"cwnd={subflow.cwnd:.3f} inflight={subflow.bytes_in_flight}"
            )
        self._transmit(subflow, pkt)
        if subflow.rto_deadline is None:
            self._arm_timer(subflow)
        return pkt

    def _arm_timer(self, subflow: Subflow) -> None:
        if subflow.rto_handle is not None:
            subflow.rto_handle.cancel()
        subflow.rto_handle = self.sim.schedule_in(
            subflow.rto, lambda: self.on_rto(subflow), f"{subflow.flow.value}.rto"
        )

    def _cancel_timer(self, subflow: Subflow) -> None:
        if subflow.rto_handle is not None:
            subflow.rto_handle.cancel()
            subflow.rto_handle = None

    @staticmethod
    def _yields_rtt_sample(subflow: Subflow, ack: Packet) -> bool:
        """Karn's rule: the echoed segment must still be unacknowledged and never resent.

        A copy of a resent segment, or one arriving after the segment was
        already acknowledged, says nothing about the current path delay.
        """
        if ack.echo_retransmitted:
            return False
        segment = subflow.segments.get(ack.echo_subflow_seq)
        return segment is not None and not segment.retransmitted

    def on_ack(self, subflow: Subflow, ack: Packet) -> None:
        now = self.sim.now
        if self._yields_rtt_sample(subflow, ack):
            sample = now - ack.echo_sent_at
            if sample > 0:
                subflow.sample_rtt(sample)
                subflow.rtt_samples.append(sample)

        data_advanced = ack.data_ack > self.data_una
        if data_advanced:
            self.data_una = ack.data_ack

        if ack.subflow_ack > subflow.snd_una:
            self._on_new_ack(subflow, ack.subflow_ack)
        elif (
            ack.subflow_ack == subflow.snd_una
            and subflow.snd_max > subflow.snd_una
            and not data_advanced
        ):
            self._on_dup_ack(subflow)
        subflow.cwnd_average.update(now, subflow.cwnd)

        if self.data_una >= self.workload_bytes:
            self._finish()
            return
        self.schedule_send()

    def _on_new_ack(self, subflow: Subflow, ack: int) -> None:
        acked = ack - subflow.snd_una
        segments = subflow.segments
        while segments:
            first = next(iter(segments))
            if first + segments[first].length > ack:
                break
            del segments[first]
        subflow.snd_una = ack
        if subflow.snd_nxt < ack:
            subflow.snd_nxt = ack
        subflow.backoff = 0

        if subflow.phase is Phase.FAST_RECOVERY:
            if ack >= subflow.recover:
                subflow.phase = Phase.CONGESTION_AVOIDANCE
                subflow.inflation = 0.0
                subflow.dup_acks = 0
            else:
                subflow.inflation = max(0.0, subflow.inflation - acked / subflow.mss) + 1.0
                self._retransmit_first(subflow)
        else:
            subflow.dup_acks = 0
            if subflow.phase is Phase.SLOW_START:
                subflow.cwnd += 1.0
                if subflow.cwnd >= subflow.ssthresh:
                    subflow.phase = Phase.CONGESTION_AVOIDANCE
            else:
                view, position = self.coupling_view(subflow)
                subflow.cwnd += increase_per_ack(self.algorithm, view, position)
            subflow.clamp_window()

        if subflow.snd_una < subflow.snd_max:
            self._arm_timer(subflow)
        else:
            self._cancel_timer(subflow)

    def _on_dup_ack(self, subflow: Subflow) -> None:
        if subflow.phase is Phase.FAST_RECOVERY:
            subflow.inflation += 1.0
            return
        if subflow.dup_acks >= DUPACK_THRESHOLD:
            return
        subflow.dup_acks += 1
        if subflow.dup_acks == DUPACK_THRESHOLD and subflow.snd_una >= subflow.recover:
            decrease_on_loss(subflow)
            subflow.recover = subflow.snd_max
            subflow.inflation = float(DUPACK_THRESHOLD)
            subflow.fast_retransmits += 1
            if self.sim.tracing:
                self.sim.note(f"{subflow.flow.value} fast-retransmit cwnd={subflow.cwnd:.3f}")
            self._retransmit_first(subflow)

    def _retransmit_first(self, subflow: Subflow) -> None:
        segment = subflow.segments.get(subflow.snd_una)
        if segment is not None:
            self._send_segment(subflow, segment)

    def on_rto(self, subflow: Subflow) -> None:
        """Timeout: collapse the window, back off the timer and go back to the first unacked segment."""
        subflow.rto_handle = None
        if self.complete or subflow.snd_una >= subflow.snd_max:
            return
        subflow.timeouts += 1
        decrease_on_loss(subflow, timeout=True)
        subflow.inflation = 0.0
        subflow.dup_acks = 0
        subflow.recover = subflow.snd_max
        subflow.snd_nxt = subflow.snd_una
        subflow.backoff += 1
        subflow.cwnd_average.update(self.sim.now, subflow.cwnd)
        if self.sim.tracing:
            self.sim.note(f"{subflow.flow.value} rto next={subflow.rto}")
        self._retransmit_first(subflow)
        self.schedule_send()

    def _finish(self) -> None:
        if self.completed_at is not None:
            return
        self.completed_at = self.sim.now
        for subflow in self.subflows:
            self._cancel_timer(subflow)
        logger.debug("workload of %s bytes acknowledged at %s ns", self.workload_bytes, self.completed_at)
        if self._on_complete is not None:
            self._on_complete()
