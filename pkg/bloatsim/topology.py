"""The HetNet scenario: a multihomed sender, two access paths, CBR cross traffic and one bottleneck.

    UE --A--\\
             router --C--> receiver
    UE --B--/   ^
    CBR ---D----'

ACKs return on per-subflow reverse links (delay C + delay of the subflow's
access link) that bypass the studied queue.
"""
from __future__ import annotations

import itertools
import logging
from typing import Dict, Optional

from .config import ScenarioConfig
from .engine import NS_PER_MS, Prng, SimTime, Simulator, ms, to_seconds
from .history import EventTrace
from .metrics import RunMetrics, goodput, mean_rtt
from .mptcp import CcAlgorithm, MptcpConnection, ReceiveBuffer, Subflow
from .network import CbrSource, Link, QueueMonitor, Router
from .packet import Flow, Packet
from .qdisc import DisciplineConfig, build_discipline

logger = logging.getLogger(__name__)


def mbps(value: float) -> int:
    return int(round(value * 1_000_000))


class HetNetTopology:
    """One fully wired simulation run of a (discipline, algorithm, path-A delay) cell."""

    def __init__(
        self,
        config: ScenarioConfig,
        qdisc: str,
        cc: CcAlgorithm | str,
        delay_a_ms: float,
        seed: int,
        trace: Optional[EventTrace] = None,
    ) -> None:
        self.config = config
        self.qdisc_name = qdisc
        self.algorithm = CcAlgorithm.parse(cc) if isinstance(cc, str) else cc
        self.delay_a_ms = delay_a_ms
        self.seed = seed
        self.sim = Simulator(trace)
        self.prng = Prng(seed)
        self.ids = itertools.count()

        access = mbps(config.access_rate_mbps)
        jitter = config.jitter_fraction
        self.delays: Dict[Flow, SimTime] = {
            Flow.SUBFLOW_A: ms(delay_a_ms),
            Flow.SUBFLOW_B: ms(config.delay_b_ms),
        }
        delay_c = ms(config.delay_c_ms)
        self.delay_c = delay_c

        self.forward_links: Dict[Flow, Link] = {
            Flow.SUBFLOW_A: Link("link-A", access, self.delays[Flow.SUBFLOW_A], jitter, self.prng),
            Flow.SUBFLOW_B: Link("link-B", access, self.delays[Flow.SUBFLOW_B], jitter, self.prng),
        }
        self.reverse_links: Dict[Flow, Link] = {
            flow: Link(f"{link.name}.reverse", access, delay_c + self.delays[flow], jitter, self.prng)
            for flow, link in self.forward_links.items()
        }
        self.link_c = Link("link-C", mbps(config.bottleneck_rate_mbps), delay_c, jitter, self.prng)
        self.link_d = Link("link-D", access, ms(config.delay_d_ms), jitter, self.prng)

        self.discipline = build_discipline(
            qdisc,
            DisciplineConfig(
                limit=config.queue_limit,
                target=ms(config.tau_ms),
                interval=ms(config.lambda_ms),
                quantum=config.quantum,
                flow_buckets=config.flow_buckets,
            ),
        )
        self.monitor = QueueMonitor()
        self.router = Router(self.sim, self.discipline, self.link_c, self._on_bottleneck_exit, self.monitor)
        self.receiver = ReceiveBuffer(config.rcv_window_bytes, self.ids)

        mss = config.mss
        cap = config.rcv_window_bytes / mss
        self.subflows: Dict[Flow, Subflow] = {
            Flow.SUBFLOW_A: Subflow(Flow.SUBFLOW_A, 0, mss, config.initial_cwnd, cap),
            Flow.SUBFLOW_B: Subflow(Flow.SUBFLOW_B, 1, mss, config.initial_cwnd, cap),
        }
        self.connection = MptcpConnection(
            self.sim,
            self.algorithm,
            list(self.subflows.values()),
            config.workload_bytes,
            config.rcv_window_bytes,
            config.header_bytes,
            self._send_data,
            self.ids,
            on_complete=self._on_complete,
        )
        self.cbr = CbrSource(
            self.sim, mbps(config.cbr_rate_mbps), config.cbr_packet_size, self.link_d, self.router.enqueue, self.ids
        )
        self.started = False

    def handshake_rtt(self, flow: Flow) -> SimTime:
        """Base round trip of a path, used as the handshake duration; at least 1 ns."""
        return max(2 * (self.delays[flow] + self.delay_c), 1)

    def _send_data(self, subflow: Subflow, pkt: Packet) -> None:
        self.forward_links[subflow.flow].forward(self.sim, pkt, self.router.enqueue)

    def _on_bottleneck_exit(self, pkt: Packet) -> None:
        if pkt.flow is Flow.UDP_CBR:
            return
        ack = self.receiver.on_data(pkt, self.sim.now)
        if ack is not None:
            self.reverse_links[pkt.flow].forward(self.sim, ack, self._on_ack)

    def _on_ack(self, ack: Packet) -> None:
        assert ack.acked_flow is not None
        self.connection.on_ack(self.subflows[ack.acked_flow], ack)

    def _establish(self, flow: Flow) -> None:
        self.connection.establish(self.subflows[flow], self.handshake_rtt(flow))
        if flow is Flow.SUBFLOW_A:
            # the second subflow joins once the first handshake has completed
            rtt_b = self.handshake_rtt(Flow.SUBFLOW_B)
            self.sim.schedule_in(rtt_b, lambda: self._establish(Flow.SUBFLOW_B), "subflow-B.established")

    def _on_complete(self) -> None:
        self.cbr.stop()
        self.sim.stop()

    def start(self) -> None:
        if self.started:
            return
        self.started = True
        self.cbr.start(0)
        self.sim.schedule_at(
            self.handshake_rtt(Flow.SUBFLOW_A), lambda: self._establish(Flow.SUBFLOW_A), "subflow-A.established"
        )

    def run(self, horizon: Optional[SimTime] = None) -> bool:
        """Run until the workload is acknowledged or ``horizon`` passes; True when complete."""
        self.start()
        self.sim.run_until_idle(horizon)
        if not self.connection.complete:
            logger.debug(
                "%s/%s/%gms seed=%s stopped at %s ns with %s bytes acknowledged",
                self.qdisc_name, self.algorithm.value, self.delay_a_ms, self.seed,
                self.sim.now, self.connection.data_una,
            )
        return self.connection.complete

    @property
    def finished_at(self) -> SimTime:
        completed = self.connection.completed_at
        return self.sim.now if completed is None else completed

    def collect_metrics(self, scenario: str, rep: int) -> RunMetrics:
        """Summarize the run into one CSV row."""
        end = self.finished_at
        receiver = self.receiver
        first = receiver.first_delivery_at
        last = receiver.last_delivery_at
        per_path: Dict[Flow, float] = {}
        for flow in self.subflows:
            received = receiver.bytes_by_flow.get(flow, 0)
            per_path[flow] = 0.0 if first is None or last is None or last <= first else goodput(received, first, last)

        rtt: Dict[Flow, Optional[float]] = {}
        for flow, subflow in self.subflows.items():
            mean = mean_rtt(subflow.rtt_samples)
            rtt[flow] = None if mean is None else mean / NS_PER_MS

        avg_sojourn: Optional[float] = None
        if self.discipline.measures_sojourn and self.monitor.sojourn_count > 0:
            avg_sojourn = self.monitor.sojourn_sum / self.monitor.sojourn_count / NS_PER_MS

        subflow_a = self.subflows[Flow.SUBFLOW_A]
        subflow_b = self.subflows[Flow.SUBFLOW_B]
        return RunMetrics(
            scenario=scenario,
            qdisc=self.qdisc_name,
            cc=self.algorithm.value,
            delay_a_ms=self.delay_a_ms,
            rep=rep,
            seed=self.seed,
            goodput_bps_total=per_path[Flow.SUBFLOW_A] + per_path[Flow.SUBFLOW_B],
            goodput_bps_a=per_path[Flow.SUBFLOW_A],
            goodput_bps_b=per_path[Flow.SUBFLOW_B],
            rtt_ms_a=rtt[Flow.SUBFLOW_A],
            rtt_ms_b=rtt[Flow.SUBFLOW_B],
            drops=self.discipline.drops,
            avg_qlen_pkts=self.monitor.occupancy.value(end),
            avg_sojourn_ms=avg_sojourn,
            duration_s=to_seconds(end),
            avg_cwnd_mss_a=subflow_a.cwnd_average.value(end),
            avg_cwnd_mss_b=subflow_b.cwnd_average.value(end),
            delivered_bytes=receiver.delivered_bytes,
        )
