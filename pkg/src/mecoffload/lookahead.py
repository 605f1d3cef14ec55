"""Look-ahead reward shaping via virtual queue transitions.

A candidate action is charged not only its own cost but also the mean
best-case cost of sampled near-future tasks evaluated against the
virtual next state the action would leave behind. This penalizes
decisions that consume the capacity subsequent tasks will need.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import (
    ChannelModel,
    CostParams,
    SystemState,
    Task,
    _validate_action,
    effective_rate,
)
from .oracle import oracle_action


@dataclass(frozen=True)
class LookaheadConfig:
    lookahead_k: int = 3
    lambda_weight: float = 0.3
    size_factor_range: tuple[float, float] = (0.5, 1.5)
    seed_stream: int = 0  # id of the dedicated RNG stream

    def __post_init__(self):
        if self.lookahead_k < 1:
            raise ValueError("lookahead_k must be >= 1")
        if self.lambda_weight < 0:
            raise ValueError("lambda_weight must be >= 0")
        lo, hi = self.size_factor_range
        if not 0 < lo <= hi:
            raise ValueError("size_factor_range must satisfy 0 < low <= high")


def virtual_transition(state: SystemState, action: int) -> SystemState:
    """Hypothetical next state after the action, without touching the input.

    The chosen server drains one decision's worth of service and admits
    the task (active count +1); every other queue drains normally. A
    local decision loads the device queue instead.
    """
    _validate_action(state, action)
    task = state.task
    dt = state.slot_seconds
    gamma = task.density_cycles_per_bit

    servers = []
    for idx, srv in enumerate(state.servers):
        budget = effective_rate(srv) * dt / gamma
        backlog = max(0.0, srv.backlog_bits - budget)
        active = srv.active_tasks
        if action == idx + 1:
            backlog += task.size_bits
            active += 1
        servers.append(replace(srv, backlog_bits=backlog, active_tasks=active))

    local_budget = state.device.local_freq_hz * dt / gamma
    local = max(0.0, state.device.local_backlog_bits - local_budget)
    if action == 0:
        local += task.size_bits
    device = replace(state.device, local_backlog_bits=local)

    return replace(state, servers=tuple(servers), device=device)


def sample_future_tasks(
    base: Task,
    config: LookaheadConfig,
    rng: np.random.Generator,
    num_users: int = 1,
) -> list[Task]:
    """K hypothetical tasks sized around the current one; density and
    deadline are inherited. Consumes only the caller's RNG stream."""
    lo, hi = config.size_factor_range
    tasks = []
    for k in range(config.lookahead_k):
        size = float(base.size_bits * rng.uniform(lo, hi))
        user = int(rng.integers(num_users))
        tasks.append(
            Task(
                id=-(k + 1),  # negative ids mark hypothetical tasks
                user=user,
                size_bits=size,
                density_cycles_per_bit=base.density_cycles_per_bit,
                deadline_slots=base.deadline_slots,
            )
        )
    return tasks


def impact(
    state: SystemState,
    action: int,
    channel: ChannelModel,
    cost_params: CostParams,
    config: LookaheadConfig,
    rng: np.random.Generator,
    num_users: int = 1,
) -> float:
    """Mean best-case cost (slots) of K sampled future tasks under the
    virtual next state. Fresh uplink rates are drawn per future task."""
    virtual = virtual_transition(state, action)
    futures = sample_future_tasks(state.task, config, rng, num_users)
    total = 0.0
    for future in futures:
        rates = channel.draw_rates(rng, len(state.servers))
        probe = replace(virtual, task=future, uplink_rates_bps=rates)
        total += oracle_action(probe, cost_params)[1]
    return total / len(futures)


def shaped_reward(cost_j: float, impact_c: float, config: LookaheadConfig) -> float:
    """-(own cost + lambda * future impact)."""
    return -(cost_j + config.lambda_weight * impact_c)


def discounted_return(rewards, eta: float) -> float:
    """Sum of eta**i * r_i over a finite reward sequence."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    return float(sum(r * eta**i for i, r in enumerate(rewards)))


class LookaheadShaper:
    """Binds channel, cost params, and a dedicated RNG stream so training
    and evaluation loops can score candidate actions in one call."""

    def __init__(
        self,
        channel: ChannelModel,
        cost_params: CostParams,
        config: LookaheadConfig,
        rng: np.random.Generator,
        num_users: int = 1,
    ):
        self.channel = channel
        self.cost_params = cost_params
        self.config = config
        self.rng = rng
        self.num_users = num_users

    def impact(self, state: SystemState, action: int) -> float:
        return impact(
            state, action, self.channel, self.cost_params, self.config, self.rng, self.num_users
        )

    def reward(self, state: SystemState, action: int, cost_j: float) -> float:
        return shaped_reward(cost_j, self.impact(state, action), self.config)


def make_lookahead_greedy(
    channel: ChannelModel,
    cost_params: CostParams,
    config: LookaheadConfig,
    rng: np.random.Generator,
    num_users: int = 1,
):
    """Policy minimizing own cost + lambda * impact at every decision."""
    from .oracle import evaluate_all

    shaper = LookaheadShaper(channel, cost_params, config, rng, num_users)

    def decide(state: SystemState) -> int:
        best_action, best_score = 0, float("inf")
        for action, cost in evaluate_all(state, cost_params):
            score = cost + config.lambda_weight * shaper.impact(state, action)
            if score < best_score:
                best_action, best_score = action, score
        return best_action

    return decide
