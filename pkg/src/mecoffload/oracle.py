"""Exhaustive one-step action evaluation and the min-cost oracle."""

from __future__ import annotations

from .model import CostParams, SystemState, candidate_latency, generalized_cost


def evaluate_all(state: SystemState, params: CostParams) -> list[tuple[int, float]]:
    """Cost of every candidate action, local first, in index order."""
    return [
        (action, generalized_cost(candidate_latency(state, action), state.task, params))
        for action in range(state.num_servers + 1)
    ]


def oracle_action(state: SystemState, params: CostParams) -> tuple[int, float]:
    """One-step optimal (action, cost); ties go to the lowest index."""
    return min(evaluate_all(state, params), key=lambda pair: pair[1])
