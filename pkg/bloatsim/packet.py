"""Packets flowing through links and queue disciplines."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional


class Flow(str, Enum):
    """Flow identity carried by every packet; FQ variants classify on it."""

    SUBFLOW_A = "subflow-A"
    SUBFLOW_B = "subflow-B"
    UDP_CBR = "udp-cbr"
    ACK = "ack"


@dataclass(slots=True)
class Packet:
    """A packet on the wire.

    ``seq`` is the connection-level byte offset of the payload (data
    sequence number); ``subflow_seq`` is the offset within the subflow's own
    sequence space. ACK packets reuse the same record and fill the ``ack_*``
    and ``echo_*`` fields instead of the payload.
    """

    id: int
    flow: Flow
    size: int
    seq: int = 0
    subflow_seq: int = 0
    payload: int = 0
    sent_at: int = 0
    enq: Optional[int] = None
    retransmitted: bool = False
    acked_flow: Optional[Flow] = None
    data_ack: int = 0
    subflow_ack: int = 0
    echo_sent_at: int = 0
    echo_subflow_seq: int = 0
    echo_retransmitted: bool = False

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError(f"packet size must be positive, got {self.size}")
