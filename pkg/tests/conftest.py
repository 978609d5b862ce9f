from __future__ import annotations

from typing import List

import numpy as np
import pytest

from bloatsim.config import ScenarioConfig
from bloatsim.engine import Simulator
from bloatsim.packet import Flow, Packet


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="run trend checks over the full default grid")


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: full-grid trend check, needs --runslow")


def pytest_collection_modifyitems(config: pytest.Config, items: List[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def sim() -> Simulator:
    return Simulator()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def small_config() -> ScenarioConfig:
    """Default scenario with a workload small enough for unit-test speed."""
    return ScenarioConfig(workload_bytes=60_000, reps=2, delay_a_ms=(1.0, 100.0))


class PacketFactory:
    def __init__(self) -> None:
        self.next_id = 0

    def __call__(self, flow: Flow = Flow.SUBFLOW_A, size: int = 1458, seq: int = 0) -> Packet:
        pkt = Packet(id=self.next_id, flow=flow, size=size, seq=seq)
        self.next_id += 1
        return pkt


@pytest.fixture
def make_packet() -> PacketFactory:
    return PacketFactory()
