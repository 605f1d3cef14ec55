"""Seeded slotted simulation: task arrivals, queue evolution, episodes.

The environment advances per decision, mirroring the task-indexed queue
recursion L <- max(0, L - f_eff*dt/gamma) + D. Every server keeps a FIFO
of admitted workloads so the active-task count drops when a task's
admitted bits are fully drained. One environment instance is
single-threaded; run several with independent seeds for parallelism.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .model import (
    ChannelModel,
    CostParams,
    DeviceState,
    InvalidActionError,
    ServerState,
    SystemState,
    Task,
    candidate_latency,
    generalized_cost,
)


class ConfigurationError(ValueError):
    """A SimConfig field is out of its valid range."""


class EpisodeError(RuntimeError):
    """Episode aborted; carries the partial trace collected so far."""

    def __init__(self, message: str, trace: "EpisodeTrace"):
        super().__init__(message)
        self.trace = trace


def derive_seed(*parts: int) -> int:
    """Stable child seed from integer parts (episode indices, stream ids)."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SimConfig:
    num_servers: int = 6
    num_users: int = 3
    slot_seconds: float = 0.1
    arrival_prob: float = 0.3
    capacity_range_hz: tuple[float, float] = (20e9, 48e9)
    size_range_bits: tuple[float, float] = (2e6, 5e6)
    density_cycles_per_bit: float = 297.0
    deadline_slots: float = 10.0
    deadline_penalty: float = 10.0
    local_freq_hz: float = 2e9
    episode_slots: int = 200
    history_len: int = 5
    seed: int = 0
    channel_mode: str = "direct"
    rate_range_bps: tuple[float, float] = (7e6, 21e6)
    # Optional explicit heterogeneous capacities; overrides capacity_range_hz.
    server_capacities_hz: tuple[float, ...] | None = None

    def validate(self) -> None:
        checks = [
            (self.num_servers >= 1, "num_servers"),
            (self.num_users >= 1, "num_users"),
            (self.slot_seconds > 0, "slot_seconds"),
            (0.0 <= self.arrival_prob <= 1.0, "arrival_prob"),
            (0 < self.capacity_range_hz[0] <= self.capacity_range_hz[1], "capacity_range_hz"),
            (0 < self.size_range_bits[0] <= self.size_range_bits[1], "size_range_bits"),
            (self.density_cycles_per_bit > 0, "density_cycles_per_bit"),
            (self.deadline_slots > 0, "deadline_slots"),
            (self.deadline_penalty >= 0, "deadline_penalty"),
            (self.local_freq_hz > 0, "local_freq_hz"),
            (self.episode_slots > 0, "episode_slots"),
            (self.history_len >= 1, "history_len"),
            (self.channel_mode in ("direct", "faded"), "channel_mode"),
            (0 < self.rate_range_bps[0] <= self.rate_range_bps[1], "rate_range_bps"),
            (
                self.server_capacities_hz is None
                or (
                    len(self.server_capacities_hz) == self.num_servers
                    and all(c > 0 for c in self.server_capacities_hz)
                ),
                "server_capacities_hz",
            ),
        ]
        for ok, name in checks:
            if not ok:
                raise ConfigurationError(f"invalid SimConfig field: {name}")

    def cost_params(self) -> CostParams:
        return CostParams(self.deadline_penalty, self.slot_seconds)


@dataclass
class StepRecord:
    """One decision: the state seen, the action taken, and its realized cost."""

    state: SystemState
    action: int
    latency_slots: float
    cost: float
    deadline_violated: bool
    shaped_reward: float | None = None

    def trace_fields(self) -> dict:
        return {
            "slot": self.state.slot,
            "user": self.state.task.user,
            "size_bits": self.state.task.size_bits,
            "action": self.action,
            "latency_slots": self.latency_slots,
            "cost": self.cost,
            "violated": self.deadline_violated,
        }


@dataclass
class EpisodeTrace:
    config: SimConfig
    records: list[StepRecord]
    final_backlogs_bits: tuple[float, ...]
    assignment_counts: tuple[int, ...]  # per server, actions 1..E
    local_count: int

    def costs(self) -> list[float]:
        return [r.cost for r in self.records]

    def save(self, path) -> None:
        """Write one JSON record per decision."""
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record.trace_fields()) + "\n")


class _ServerQueue:
    """Mutable server: capacity plus a FIFO of remaining bits per admitted task."""

    def __init__(self, sid: int, capacity_hz: float, history_len: int):
        self.id = sid
        self.capacity_hz = capacity_hz
        self.fifo: deque[float] = deque()
        self.history: deque[float] = deque(maxlen=history_len)
        self.bits_admitted = 0.0
        self.bits_drained = 0.0

    @property
    def active_tasks(self) -> int:
        return len(self.fifo)

    @property
    def backlog_bits(self) -> float:
        return float(sum(self.fifo))

    def drain(self, budget_bits: float) -> float:
        moved = 0.0
        remaining = budget_bits
        while self.fifo and remaining > 0.0:
            head = self.fifo[0]
            take = head if head <= remaining else remaining
            if take >= head:
                self.fifo.popleft()  # task's admitted bits done; frees a PS share
            else:
                self.fifo[0] = head - take
            remaining -= take
            moved += take
        self.bits_drained += moved
        return moved

    def admit(self, bits: float) -> None:
        self.fifo.append(float(bits))
        self.bits_admitted += bits

    def snapshot(self) -> ServerState:
        return ServerState(
            id=self.id,
            capacity_hz=self.capacity_hz,
            active_tasks=self.active_tasks,
            backlog_bits=self.backlog_bits,
            history=tuple(self.history),
        )


class Environment:
    """Stochastic decision environment for one episode configuration."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.cost_params = config.cost_params()
        self.rng = np.random.default_rng(config.seed)
        if config.channel_mode == "direct":
            self.channel = ChannelModel(mode="direct", rate_range_bps=config.rate_range_bps)
        else:
            self.channel = ChannelModel.calibrated()
        if config.server_capacities_hz is not None:
            caps = list(config.server_capacities_hz)
        else:
            lo, hi = config.capacity_range_hz
            caps = [float(c) for c in self.rng.uniform(lo, hi, config.num_servers)]
        self.servers = [
            _ServerQueue(i + 1, caps[i], config.history_len) for i in range(config.num_servers)
        ]
        self.local_backlogs = [0.0] * config.num_users
        self.slot = 0
        self._next_task_id = 0
        self._pending: tuple[int, SystemState] | None = None

    @property
    def num_servers(self) -> int:
        return self.config.num_servers

    def sample_arrivals(self) -> list[Task]:
        """Per-user Bernoulli arrivals this slot, ordered by user index."""
        cfg = self.config
        tasks = []
        for user in range(cfg.num_users):
            if self.rng.random() < cfg.arrival_prob:
                size = float(self.rng.uniform(*cfg.size_range_bits))
                tasks.append(
                    Task(
                        id=self._next_task_id,
                        user=user,
                        size_bits=size,
                        density_cycles_per_bit=cfg.density_cycles_per_bit,
                        deadline_slots=cfg.deadline_slots,
                    )
                )
                self._next_task_id += 1
        return tasks

    def observe(self, task: Task) -> SystemState:
        """Snapshot the system for one pending task; queues are not touched."""
        cfg = self.config
        rates = self.channel.draw_rates(self.rng, cfg.num_servers)
        state = SystemState(
            task=task,
            uplink_rates_bps=rates,
            device=DeviceState(cfg.local_freq_hz, self.local_backlogs[task.user]),
            servers=tuple(s.snapshot() for s in self.servers),
            slot=self.slot,
            slot_seconds=cfg.slot_seconds,
        )
        self._pending = (task.id, state)
        return state

    def step(self, task: Task, action: int) -> StepRecord:
        """Apply one decision: realize its cost and advance every queue."""
        cfg = self.config
        if not isinstance(action, (int, np.integer)) or isinstance(action, bool):
            raise InvalidActionError(f"action must be an integer, got {action!r}")
        if not 0 <= action <= cfg.num_servers:
            raise InvalidActionError(f"action {action} outside 0..{cfg.num_servers}")

        if self._pending is not None and self._pending[0] == task.id:
            state = self._pending[1]
        else:
            state = self.observe(task)

        latency_s = candidate_latency(state, int(action))
        cost = generalized_cost(latency_s, task, self.cost_params)

        gamma = cfg.density_cycles_per_bit
        dt = cfg.slot_seconds
        for idx, srv in enumerate(self.servers):
            # PS share of the arriving task sets the per-decision drain budget
            budget = srv.capacity_hz / (srv.active_tasks + 1) * dt / gamma
            srv.drain(budget)
            if action == idx + 1:
                srv.admit(task.size_bits)
        local_budget = cfg.local_freq_hz * dt / gamma
        for user in range(cfg.num_users):
            self.local_backlogs[user] = max(0.0, self.local_backlogs[user] - local_budget)
        if action == 0:
            self.local_backlogs[task.user] += task.size_bits
        for srv in self.servers:
            srv.history.append(srv.backlog_bits)

        self._pending = None
        latency_slots = latency_s / dt
        return StepRecord(
            state=state,
            action=int(action),
            latency_slots=latency_slots,
            cost=cost,
            deadline_violated=latency_slots > task.deadline_slots,
        )

    def conservation_report(self) -> list[tuple[float, float, float]]:
        """Per-server (bits admitted, bits drained, final backlog)."""
        return [(s.bits_admitted, s.bits_drained, s.backlog_bits) for s in self.servers]


def run_episode(env: Environment, policy: Callable[[SystemState], int]) -> EpisodeTrace:
    """Drive one full episode; deterministic given (seed, deterministic policy)."""
    records: list[StepRecord] = []
    for slot in range(env.config.episode_slots):
        env.slot = slot
        for task in env.sample_arrivals():
            state = env.observe(task)
            try:
                action = policy(state)
                records.append(env.step(task, action))
            except Exception as exc:
                raise EpisodeError(
                    f"policy failed at slot {slot} (task {task.id}): {exc}",
                    _finish_trace(env, records),
                ) from exc
    return _finish_trace(env, records)


def _finish_trace(env: Environment, records: list[StepRecord]) -> EpisodeTrace:
    counts = [0] * env.config.num_servers
    local = 0
    for record in records:
        if record.action == 0:
            local += 1
        else:
            counts[record.action - 1] += 1
    return EpisodeTrace(
        config=env.config,
        records=records,
        final_backlogs_bits=tuple(s.backlog_bits for s in env.servers),
        assignment_counts=tuple(counts),
        local_count=local,
    )
