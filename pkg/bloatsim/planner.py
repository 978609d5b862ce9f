"""Planning of the (discipline x algorithm x path-A delay) factor grid and per-run seeds."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .config import ConfigurationError, ScenarioConfig
from .mptcp import CcAlgorithm
from .qdisc import DISCIPLINES

SEED_MASK = 2**64 - 1


@dataclass(frozen=True)
class FactorGrid:
    """The three sweep dimensions; none may be empty."""

    qdiscs: Tuple[str, ...]
    ccs: Tuple[str, ...]
    delays_ms: Tuple[float, ...]

    def __post_init__(self) -> None:
        for dimension in ("qdiscs", "ccs", "delays_ms"):
            if not getattr(self, dimension):
                raise ConfigurationError(f"factor grid dimension '{dimension}' is empty")
        unknown = [name for name in self.qdiscs if name not in DISCIPLINES]
        if unknown:
            raise ConfigurationError(f"unknown queue discipline(s): {', '.join(unknown)}")
        known_ccs = {algorithm.value for algorithm in CcAlgorithm}
        unknown = [name for name in self.ccs if name not in known_ccs]
        if unknown:
            raise ConfigurationError(f"unknown congestion control(s): {', '.join(unknown)}")
        if any(delay < 0 for delay in self.delays_ms):
            raise ConfigurationError("path-A delays must be ≥ 0")

    @classmethod
    def from_config(
        cls,
        config: ScenarioConfig,
        qdiscs: Optional[Sequence[str]] = None,
        ccs: Optional[Sequence[str]] = None,
        delays_ms: Optional[Sequence[float]] = None,
    ) -> "FactorGrid":
        return cls(
            qdiscs=tuple(qdiscs) if qdiscs else config.qdiscs,
            ccs=tuple(ccs) if ccs else config.ccs,
            delays_ms=tuple(delays_ms) if delays_ms else config.delay_a_ms,
        )

    @property
    def size(self) -> int:
        return len(self.qdiscs) * len(self.ccs) * len(self.delays_ms)


@dataclass(frozen=True)
class CellSpec:
    """One run to execute: a grid cell plus its repetition index and derived seed."""

    qdisc: str
    cc: str
    delay_a_ms: float
    rep: int
    seed: int

    @property
    def cell(self) -> Tuple[str, str, float]:
        return (self.qdisc, self.cc, self.delay_a_ms)


def cell_hash(qdisc: str, cc: str, delay_a_ms: float) -> int:
    """First 8 bytes (big-endian) of SHA-256 over ``qdisc|cc|delay``; stable across platforms and processes."""
    key = f"{qdisc}|{cc}|{delay_a_ms:g}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def derive_seed(base_seed: int, qdisc: str, cc: str, delay_a_ms: float, rep: int) -> int:
    """Seed of one repetition: (base_seed XOR cell_hash) + rep, modulo 2^64."""
    return ((base_seed ^ cell_hash(qdisc, cc, delay_a_ms)) + rep) & SEED_MASK


def plan_cells(grid: FactorGrid, reps: int, base_seed: int) -> List[CellSpec]:
    """Expand the grid into runs, ordered by (qdisc, cc, delay, rep) as listed."""
    print(
        "[bloatsim/planner.py][plan_cells][Start] "
        f"qdiscs={list(grid.qdiscs)} ccs={list(grid.ccs)} delays_ms={list(grid.delays_ms)} reps={reps}"
    )
    if reps < 1:
        raise ConfigurationError(f"reps must be ≥ 1, got {reps}")
    plan = [
        CellSpec(
            qdisc=qdisc,
            cc=cc,
            delay_a_ms=delay,
            rep=rep,
            seed=derive_seed(base_seed, qdisc, cc, delay, rep),
        )
        for qdisc in grid.qdiscs
        for cc in grid.ccs
        for delay in grid.delays_ms
        for rep in range(reps)
    ]
    print(
        "[bloatsim/planner.py][plan_cells][End] "
        f"runs_count={len(plan)}"
    )
    return plan
