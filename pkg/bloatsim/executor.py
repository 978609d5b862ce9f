"""Execution of planned runs: one isolated simulation per (cell, rep), optionally in worker processes."""
from __future__ import annotations

import logging
from concurrent.futures import Future, ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .config import ScenarioConfig
from .engine import seconds, to_seconds
from .history import EventTrace
from .metrics import RunMetrics, aggregate_cells, write_aggregate_csv, write_runs_csv
from .planner import CellSpec, FactorGrid, derive_seed, plan_cells
from .topology import HetNetTopology

logger = logging.getLogger(__name__)

RUNS_FILE = "runs.csv"
AGGREGATE_FILE = "aggregate.csv"


class SimulationStall(RuntimeError):
    """Raised when a run passes the simulated-time ceiling without finishing its workload."""


@dataclass
class CellFailure:
    qdisc: str
    cc: str
    delay_a_ms: float
    rep: int
    message: str


@dataclass
class GridResult:
    """Outcome of a grid: successful runs in (cell, rep) order plus recorded failures."""

    runs: List[RunMetrics] = field(default_factory=list)
    failures: List[CellFailure] = field(default_factory=list)
    runs_path: Optional[Path] = None
    aggregate_path: Optional[Path] = None

    @property
    def ok(self) -> bool:
        return not self.failures


def run_cell(
    config: ScenarioConfig,
    qdisc: str,
    cc: str,
    delay_a_ms: float,
    rep: int,
    seed: Optional[int] = None,
    trace: Optional[EventTrace] = None,
) -> RunMetrics:
    """Build the scenario for one cell, run it to completion and return its metrics."""
    if seed is None:
        seed = derive_seed(config.base_seed, qdisc, cc, delay_a_ms, rep)
    topology = HetNetTopology(config, qdisc, cc, delay_a_ms, seed, trace)
    ceiling = seconds(config.stall_ceiling_s)
    if not topology.run(horizon=ceiling):
        raise SimulationStall(
            f"{qdisc}/{cc}/{delay_a_ms:g}ms rep {rep}: workload not acknowledged after "
            f"{to_seconds(topology.sim.now):.3f} s simulated "
            f"(acked {topology.connection.data_una} of {config.workload_bytes} bytes)"
        )
    sim = topology.sim
    if sim.executed + sim.cancelled != sim.scheduled:
        raise RuntimeError(
            f"event accounting broken: executed={sim.executed} cancelled={sim.cancelled} scheduled={sim.scheduled}"
        )
    metrics = topology.collect_metrics(config.scenario, rep)
    if metrics.delivered_bytes != config.workload_bytes:
        raise RuntimeError(f"delivered {metrics.delivered_bytes} bytes, expected {config.workload_bytes}")
    logger.debug(
        "%s/%s/%gms rep %s done in %.3f s simulated, %s drops",
        qdisc, cc, delay_a_ms, rep, metrics.duration_s, metrics.drops,
    )
    return metrics


def _run_spec(config: ScenarioConfig, spec: CellSpec) -> RunMetrics:
    return run_cell(config, spec.qdisc, spec.cc, spec.delay_a_ms, spec.rep, seed=spec.seed)


class GridExecutor:
    """Runs a plan sequentially (jobs=1) or over a process pool; output order never depends on jobs."""

    def __init__(self, config: ScenarioConfig, jobs: int = 1) -> None:
        print(
            "[bloatsim/executor.py][GridExecutor.__init__][Start] "
            f"scenario={config.scenario} jobs={jobs}"
        )
        if jobs < 1:
            raise ValueError(f"jobs must be ≥ 1, got {jobs}")
        self.config = config
        self.jobs = jobs
        print(
            "[bloatsim/executor.py][GridExecutor.__init__][End] "
            f"jobs={self.jobs}"
        )

    def execute(self, plan: List[CellSpec]) -> GridResult:
        print(
            "[bloatsim/executor.py][GridExecutor.execute][Start] "
            f"runs_count={len(plan)} jobs={self.jobs}"
        )
        result = GridResult()
        if self.jobs == 1:
            for spec in plan:
                self._collect(result, spec, lambda spec=spec: _run_spec(self.config, spec))
        else:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                futures: Dict[CellSpec, Future[RunMetrics]] = {
                    spec: pool.submit(_run_spec, self.config, spec) for spec in plan
                }
                for spec, future in futures.items():
                    self._collect(result, spec, future.result)
        result.runs.sort(key=RunMetrics.sort_key)
        print(
            "[bloatsim/executor.py][GridExecutor.execute][End] "
            f"runs_count={len(result.runs)} failures_count={len(result.failures)}"
        )
        return result

    @staticmethod
    def _collect(result: GridResult, spec: CellSpec, produce) -> None:
        try:
            result.runs.append(produce())
        except Exception as exc:  # noqa: BLE001 - a failing cell must not abort the grid
            print(
                "[bloatsim/executor.py][GridExecutor._collect][Info] "
                f"Run failed qdisc={spec.qdisc} cc={spec.cc} delay_a_ms={spec.delay_a_ms} rep={spec.rep} error={exc}"
            )
            result.failures.append(
                CellFailure(spec.qdisc, spec.cc, spec.delay_a_ms, spec.rep, f"{type(exc).__name__}: {exc}")
            )


def run_grid(config: ScenarioConfig, grid: FactorGrid, out_dir: Path, jobs: int = 1) -> GridResult:
    """Run every cell x rep of ``grid`` and write runs.csv and aggregate.csv into ``out_dir``."""
    print(
        "[bloatsim/executor.py][run_grid][Start] "
        f"cells_count={grid.size} reps={config.reps} out_dir={out_dir}"
    )
    plan = plan_cells(grid, config.reps, config.base_seed)
    result = GridExecutor(config, jobs).execute(plan)

    out_dir.mkdir(parents=True, exist_ok=True)
    result.runs_path = out_dir / RUNS_FILE
    result.aggregate_path = out_dir / AGGREGATE_FILE
    write_runs_csv(result.runs_path, result.runs)
    write_aggregate_csv(result.aggregate_path, aggregate_cells(result.runs))
    print(
        "[bloatsim/executor.py][run_grid][End] "
        f"runs_count={len(result.runs)} failures_count={len(result.failures)}"
    )
    return result
