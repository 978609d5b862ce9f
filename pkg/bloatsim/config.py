"""Scenario configuration: the line-oriented ``key = value`` format and its validation."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from .mptcp import CcAlgorithm
from .qdisc import DISCIPLINES


class ConfigurationError(RuntimeError):
    """Raised when configuration files are missing or malformed."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Every parameter of the HetNet bottleneck scenario; defaults follow the evaluation setup."""

    scenario: str = "hetnet"
    workload_bytes: int = 4 * 2**20
    bottleneck_rate_mbps: float = 1.0
    access_rate_mbps: float = 1000.0
    delay_a_ms: Tuple[float, ...] = (1.0, 10.0, 100.0, 300.0)
    delay_b_ms: float = 1.0
    delay_c_ms: float = 1.0
    delay_d_ms: float = 1.0
    queue_limit: int = 100
    packet_size: int = 1458
    header_bytes: int = 40
    rcv_window_bytes: int = 65536
    initial_cwnd: float = 2.0
    cbr_rate_mbps: float = 0.25
    cbr_packet_size: int = 1458
    tau_ms: float = 5.0
    lambda_ms: float = 100.0
    quantum: int = 1514
    flow_buckets: int = 3
    reps: int = 35
    base_seed: int = 1
    jitter_fraction: float = 0.01
    stall_ceiling_s: float = 600.0
    qdiscs: Tuple[str, ...] = ("droptail", "codel", "codel-lifo")
    ccs: Tuple[str, ...] = ("lia", "rtt-compensator", "uncoupled")

    @property
    def mss(self) -> int:
        return self.packet_size - self.header_bytes


def _parse_int(text: str) -> int:
    return int(text, 10)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_float_list(text: str) -> Tuple[float, ...]:
    return tuple(float(item) for item in _split_list(text))


def _parse_name_list(text: str) -> Tuple[str, ...]:
    return tuple(_split_list(text))


def _split_list(text: str) -> Tuple[str, ...]:
    items = tuple(item.strip() for item in text.split(","))
    if not items or any(not item for item in items):
        raise ValueError(f"malformed list '{text}'")
    return items


Rule = Tuple[Callable[[str], Any], Callable[[Any], bool], str]

_RULES: Dict[str, Rule] = {
    "scenario": (str, lambda v: bool(v) and "," not in v, "scenario must be a non-empty name without commas"),
    "workload_bytes": (_parse_int, lambda v: v > 0, "workload_bytes must be > 0"),
    "bottleneck_rate_mbps": (_parse_float, lambda v: v > 0, "bottleneck_rate_mbps must be > 0"),
    "access_rate_mbps": (_parse_float, lambda v: v > 0, "access_rate_mbps must be > 0"),
    "delay_a_ms": (_parse_float_list, lambda v: all(d >= 0 for d in v), "delay_a_ms values must be ≥ 0"),
    "delay_b_ms": (_parse_float, lambda v: v >= 0, "delay_b_ms must be ≥ 0"),
    "delay_c_ms": (_parse_float, lambda v: v >= 0, "delay_c_ms must be ≥ 0"),
    "delay_d_ms": (_parse_float, lambda v: v >= 0, "delay_d_ms must be ≥ 0"),
    "queue_limit": (_parse_int, lambda v: v >= 1, "queue_limit must be ≥ 1"),
    "packet_size": (_parse_int, lambda v: v > 0, "packet_size must be > 0"),
    "header_bytes": (_parse_int, lambda v: v >= 0, "header_bytes must be ≥ 0"),
    "rcv_window_bytes": (_parse_int, lambda v: v > 0, "rcv_window_bytes must be > 0"),
    "initial_cwnd": (_parse_float, lambda v: v >= 1, "initial_cwnd must be ≥ 1"),
    "cbr_rate_mbps": (_parse_float, lambda v: v >= 0, "cbr_rate_mbps must be ≥ 0"),
    "cbr_packet_size": (_parse_int, lambda v: v > 0, "cbr_packet_size must be > 0"),
    "tau_ms": (_parse_float, lambda v: v > 0, "tau_ms must be > 0"),
    "lambda_ms": (_parse_float, lambda v: v > 0, "lambda_ms must be > 0"),
    "quantum": (_parse_int, lambda v: v > 0, "quantum must be > 0"),
    "flow_buckets": (_parse_int, lambda v: v >= 1, "flow_buckets must be ≥ 1"),
    "reps": (_parse_int, lambda v: v >= 1, "reps must be ≥ 1"),
    "base_seed": (_parse_int, lambda v: 0 <= v < 2**64, "base_seed must be in [0, 2^64)"),
    "jitter_fraction": (_parse_float, lambda v: 0 <= v < 1, "jitter_fraction must be in [0, 1)"),
    "stall_ceiling_s": (_parse_float, lambda v: v > 0, "stall_ceiling_s must be > 0"),
    "qdiscs": (_parse_name_list, lambda v: all(q in DISCIPLINES for q in v),
               f"qdiscs must be drawn from {', '.join(DISCIPLINES)}"),
    "ccs": (_parse_name_list, lambda v: all(c in {a.value for a in CcAlgorithm} for c in v),
            f"ccs must be drawn from {', '.join(a.value for a in CcAlgorithm)}"),
}

assert set(_RULES) == {f.name for f in fields(ScenarioConfig)}


def router_flows(config: ScenarioConfig) -> int:
    """Flows that share the router queue: both subflows, plus the CBR source when it is enabled."""
    return 2 + (1 if config.cbr_rate_mbps > 0 else 0)


def _cross_check(config: ScenarioConfig) -> Optional[Tuple[str, str]]:
    """Constraints spanning several keys; returns (key, message) of the first violation."""
    if config.header_bytes >= config.packet_size:
        return "header_bytes", "header_bytes must be smaller than packet_size"
    if config.quantum < max(config.packet_size, config.cbr_packet_size):
        return "quantum", "quantum must be ≥ the largest packet size"
    if config.flow_buckets < router_flows(config):
        return "flow_buckets", f"flow_buckets must be ≥ {router_flows(config)}, one per flow reaching the router"
    if config.rcv_window_bytes < config.mss:
        return "rcv_window_bytes", "rcv_window_bytes must hold at least one segment"
    return None


def parse_config(text: str) -> ScenarioConfig:
    """Parse ``key = value`` lines into a validated :class:`ScenarioConfig`."""
    print(
        "[bloatsim/config.py][parse_config][Start] "
        f"length={len(text)}"
    )
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {number}: expected 'key = value', got '{raw.strip()}'")
        key, _, value_text = line.partition("=")
        key = key.strip()
        value_text = value_text.strip()
        if key not in _RULES:
            raise ConfigurationError(f"line {number}: unknown key '{key}'")
        if key in lines:
            raise ConfigurationError(f"line {number}: '{key}' already set on line {lines[key]}")
        parse, check, message = _RULES[key]
        try:
            value = parse(value_text)
        except ValueError:
            raise ConfigurationError(f"line {number}: malformed value for {key}: '{value_text}'") from None
        if not check(value):
            raise ConfigurationError(f"line {number}: {message}")
        values[key] = value
        lines[key] = number

    config = ScenarioConfig(**values)
    violation = _cross_check(config)
    if violation is not None:
        key, message = violation
        where = f"line {lines[key]}" if key in lines else "defaults"
        raise ConfigurationError(f"{where}: {message}")
    print(
        "[bloatsim/config.py][parse_config][End] "
        f"keys_set={sorted(values)}"
    )
    return config


def load_config(path: Path) -> ScenarioConfig:
    """Load and validate the scenario configuration at ``path``."""
    print(
        "[bloatsim/config.py][load_config][Start] "
        f"path={path}"
    )
    if not path.exists():
        raise ConfigurationError(f"Scenario configuration not found: {path}")
    config = parse_config(path.read_text(encoding="utf-8"))
    print(
        "[bloatsim/config.py][load_config][End] "
        f"scenario={config.scenario} reps={config.reps}"
    )
    return config


def override(config: ScenarioConfig, **changes: Any) -> ScenarioConfig:
    """Apply command-line overrides, validating them with the same rules as the file."""
    for key, value in changes.items():
        _, check, message = _RULES[key]
        if not check(value):
            raise ConfigurationError(f"command line: {message}")
    updated = replace(config, **changes)
    violation = _cross_check(updated)
    if violation is not None:
        raise ConfigurationError(f"command line: {violation[1]}")
    return updated


def describe(config: ScenarioConfig) -> str:
    """Render the resolved configuration back in the file format."""
    lines = []
    for item in fields(config):
        value = getattr(config, item.name)
        if isinstance(value, tuple):
            text = ",".join(_format_scalar(v) for v in value)
        else:
            text = _format_scalar(value)
        lines.append(f"{item.name} = {text}")
    return "\n".join(lines)


def _format_scalar(value: Any) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)
