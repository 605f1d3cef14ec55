"""Evaluation metrics and experiment sweeps.

Four headline metrics: average latency (slot units, penalties included),
task drop rate, performance ratio against the exhaustive one-step oracle,
and Jain's fairness index over per-server assignment counts. Policies are
always compared on paired seeds so they face identical arrival and
channel randomness.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .model import SystemState
from .oracle import oracle_action
from .prompts import PROMPT_MODES, PromptStyle, prompt_roundtrip_policy
from .simulator import Environment, SimConfig, derive_seed, run_episode

WORKLOAD_SIZES_MBITS = (2, 4, 6, 8, 10)
TOPOLOGY_SIZES = (3, 5, 7, 9, 11)
SWEEP_AXES = ("task_size", "servers", "perturbation")
REPORT_COLUMNS = ("policy", "axis", "AL", "TDR", "PR", "LBI")


@dataclass
class MetricsReport:
    avg_latency_slots: float
    drop_rate: float
    perf_ratio: float
    load_balance: float  # NaN when no task was ever offloaded
    per_action_counts: tuple[int, ...]  # local first, then servers 1..E
    n_samples: int

    def row(self) -> dict:
        """Paper-style row: AL raw, the rest as percentages (2 decimals)."""
        return {
            "AL": f"{self.avg_latency_slots:.4f}",
            "TDR": f"{self.drop_rate * 100:.2f}",
            "PR": f"{self.perf_ratio * 100:.2f}",
            "LBI": f"{self.load_balance * 100:.2f}" if not math.isnan(self.load_balance) else "nan",
        }


def avg_latency(costs: Sequence[float]) -> float:
    if len(costs) == 0:
        raise ValueError("avg_latency needs at least one cost")
    return float(np.mean(costs))


def drop_rate(costs: Sequence[float], deadlines: Sequence[float]) -> float:
    if len(costs) == 0:
        raise ValueError("drop_rate needs at least one cost")
    if len(costs) != len(deadlines):
        raise ValueError("costs and deadlines must pair up")
    return float(np.mean([c > d for c, d in zip(costs, deadlines)]))


def perf_ratio(policy_costs: Sequence[float], oracle_costs: Sequence[float]) -> float:
    if len(policy_costs) != len(oracle_costs) or len(policy_costs) == 0:
        raise ValueError("perf_ratio needs non-empty paired cost lists")
    al = float(np.mean(policy_costs))
    if al == 0:
        raise ValueError("perf_ratio undefined for zero average latency")
    return float(np.mean(oracle_costs)) / al


def load_balance(counts: Sequence[float], num_servers: int | None = None) -> float:
    """Jain's fairness index over per-server assignment counts."""
    counts = list(counts)
    w = len(counts) if num_servers is None else num_servers
    if w < 1 or len(counts) != w:
        raise ValueError("counts must cover every server")
    total = float(sum(counts))
    if total == 0:
        raise ValueError("load_balance undefined when no server was used")
    return total**2 / (w * float(sum(c**2 for c in counts)))


def evaluate_policy(
    policy: Callable[[SystemState], int],
    config: SimConfig,
    episodes: int = 20,
    base_seed: int = 1000,
) -> MetricsReport:
    """Run seeded episodes and aggregate all four metrics plus the
    per-action histogram. The same (episodes, base_seed) pair gives every
    policy identical arrival and channel randomness."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    costs: list[float] = []
    oracle_costs: list[float] = []
    deadlines: list[float] = []
    counts = np.zeros(config.num_servers + 1, dtype=int)
    for i in range(episodes):
        env = Environment(replace(config, seed=derive_seed(base_seed, i)))
        trace = run_episode(env, policy)
        for record in trace.records:
            costs.append(record.cost)
            deadlines.append(record.state.task.deadline_slots)
            oracle_costs.append(oracle_action(record.state, env.cost_params)[1])
            counts[record.action] += 1
    if not costs:
        raise ValueError("no decisions recorded; increase arrival_prob or episodes")
    server_counts = counts[1:]
    lbi = load_balance(server_counts) if server_counts.sum() > 0 else float("nan")
    return MetricsReport(
        avg_latency_slots=avg_latency(costs),
        drop_rate=drop_rate(costs, deadlines),
        perf_ratio=perf_ratio(costs, oracle_costs),
        load_balance=lbi,
        per_action_counts=tuple(int(c) for c in counts),
        n_samples=len(costs),
    )


def _axis_values(axis: str):
    if axis == "task_size":
        return WORKLOAD_SIZES_MBITS
    if axis == "servers":
        return TOPOLOGY_SIZES
    if axis == "perturbation":
        return PROMPT_MODES
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def _axis_config(config: SimConfig, axis: str, value) -> SimConfig:
    if axis == "task_size":
        size = float(value) * 1e6
        return replace(config, size_range_bits=(size, size), server_capacities_hz=None)
    if axis == "servers":
        return replace(config, num_servers=int(value), server_capacities_hz=None)
    return config  # perturbation sweeps keep the environment fixed


def sweep(
    policies: dict[str, Callable[[SimConfig], Callable[[SystemState], int]]],
    axis: str,
    config: SimConfig,
    out_path,
    episodes: int = 20,
    base_seed: int = 1000,
) -> list[dict]:
    """Evaluate every policy at every axis value and write a CSV table.

    ``policies`` maps a display name to a factory building a fresh
    decision function for a given configuration. On the perturbation
    axis each policy is routed through a serialize-then-parse round trip
    in the requested mode. A failure flushes the partial table with an
    error marker row and re-raises.
    """
    rows: list[dict] = []
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        try:
            for value in _axis_values(axis):
                cfg = _axis_config(config, axis, value)
                for name, factory in policies.items():
                    decide = factory(cfg)
                    if axis == "perturbation":
                        decide = prompt_roundtrip_policy(
                            decide, PromptStyle(mode=value), cfg.slot_seconds
                        )
                    report = evaluate_policy(decide, cfg, episodes, base_seed)
                    row = {"policy": name, "axis": value, **report.row()}
                    rows.append(row)
                    writer.writerow([row[c] for c in REPORT_COLUMNS])
                    fh.flush()
        except Exception as exc:
            writer.writerow(["ERROR", str(exc), "", "", "", ""])
            fh.flush()
            raise
    return rows
