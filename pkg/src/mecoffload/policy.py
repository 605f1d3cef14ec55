"""Topology-agnostic scorer policy and heuristic baselines.

One weight vector scores every candidate location from a fixed-length
feature vector (predicted latency components, normalized load figures,
a local flag, bias); a softmax over the per-candidate scores gives the
action distribution. Because the same weights score each candidate, the
policy works unchanged for any number of servers.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .model import CostParams, SystemState, latency_components
from .oracle import oracle_action

# Fixed reference scales so features are comparable across topologies.
CAPACITY_NORM_HZ = 48e9
BACKLOG_NORM_BITS = 50e6
ACTIVE_NORM = 10.0

FEATURE_NAMES = (
    "upload_slots",
    "wait_slots",
    "exec_slots",
    "capacity",
    "active",
    "backlog",
    "backlog_trend",
    "is_local",
    "bias",
)
FEATURE_DIM = len(FEATURE_NAMES)

BASELINE_KINDS = ("random", "local_only", "round_robin", "least_loaded", "greedy_oracle")


@dataclass
class PolicyParams:
    """Scorer weights plus softmax temperature. Treat instances as
    immutable snapshots; training replaces them wholesale."""

    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1:
            raise ValueError("weights must be a flat vector")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.weights.copy(), self.temperature)


def zero_params(dim: int = FEATURE_DIM, temperature: float = 1.0) -> PolicyParams:
    return PolicyParams(np.zeros(dim), temperature)


def _history_trend(history) -> float:
    """Least-squares slope of the backlog history, in normalized units
    per sample."""
    n = len(history)
    if n < 2:
        return 0.0
    y = np.asarray(history, dtype=float) / BACKLOG_NORM_BITS
    x = np.arange(n, dtype=float)
    x_centered = x - x.mean()
    return float(x_centered @ (y - y.mean()) / (x_centered @ x_centered))


def featurize(state: SystemState) -> np.ndarray:
    """One feature row per candidate action; shape (num_servers + 1, FEATURE_DIM)."""
    dt = state.slot_seconds
    rows = []
    for action in range(state.num_servers + 1):
        upload, wait, execute = latency_components(state, action)
        if action == 0:
            capacity = state.device.local_freq_hz
            active = 0.0
            backlog = state.device.local_backlog_bits
            trend = 0.0
            is_local = 1.0
        else:
            srv = state.servers[action - 1]
            capacity = srv.capacity_hz
            active = float(srv.active_tasks)
            backlog = srv.backlog_bits
            trend = _history_trend(srv.history)
            is_local = 0.0
        rows.append(
            [
                upload / dt,
                wait / dt,
                execute / dt,
                capacity / CAPACITY_NORM_HZ,
                active / ACTIVE_NORM,
                backlog / BACKLOG_NORM_BITS,
                trend,
                is_local,
                1.0,
            ]
        )
    return np.asarray(rows, dtype=float)


def log_probs(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    logits = features @ params.weights / params.temperature
    shifted = logits - logits.max()
    return shifted - np.log(np.sum(np.exp(shifted)))


def action_distribution(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    """Softmax over per-candidate scores; strictly positive, sums to 1."""
    return np.exp(log_probs(params, features))


def log_prob_gradient(params: PolicyParams, features: np.ndarray, action: int) -> np.ndarray:
    """Analytic grad of log pi(action): (phi_a - E_pi[phi]) / temperature."""
    probs = action_distribution(params, features)
    return (features[action] - probs @ features) / params.temperature


def sample_action(params: PolicyParams, features: np.ndarray, rng: np.random.Generator) -> int:
    probs = action_distribution(params, features)
    return int(rng.choice(len(probs), p=probs))


def scorer_policy(params: PolicyParams, rng: np.random.Generator | None = None):
    """Decision function from scorer weights: greedy argmax when ``rng``
    is None, otherwise samples from the action distribution."""

    def decide(state: SystemState) -> int:
        features = featurize(state)
        if rng is None:
            probs = action_distribution(params, features)
            return int(np.argmax(probs))
        return sample_action(params, features, rng)

    return decide


def baseline_policy(kind: str, seed: int = 0, cost_params: CostParams | None = None):
    """Heuristic decision functions. ``random`` keeps its own RNG so it
    never perturbs environment randomness."""
    if kind == "random":
        rng = np.random.default_rng(seed)

        def decide(state: SystemState) -> int:
            return int(rng.integers(state.num_servers + 1))

        return decide
    if kind == "local_only":
        return lambda state: 0
    if kind == "round_robin":
        counter = itertools.count()

        def decide(state: SystemState) -> int:
            if state.num_servers == 0:
                return 0
            return next(counter) % state.num_servers + 1

        return decide
    if kind == "least_loaded":

        def decide(state: SystemState) -> int:
            if state.num_servers == 0:
                return 0
            loads = [s.backlog_bits / s.capacity_hz for s in state.servers]
            return int(np.argmin(loads)) + 1

        return decide
    if kind == "greedy_oracle":
        if cost_params is None:
            raise ValueError("greedy_oracle baseline needs cost_params")
        return lambda state: oracle_action(state, cost_params)[0]
    raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")


def save_checkpoint(params: PolicyParams, path, metadata: dict | None = None) -> None:
    payload = {
        "dim": int(params.weights.size),
        "weights": [float(w) for w in params.weights],
        "temperature": float(params.temperature),
        "metadata": metadata or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    weights = np.asarray(payload["weights"], dtype=float)
    if weights.size != int(payload["dim"]):
        raise ValueError(f"checkpoint dimension mismatch in {path}")
    return PolicyParams(weights, float(payload["temperature"])), payload.get("metadata", {})
