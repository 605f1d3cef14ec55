"""Supervised initialization and GRPO for the scorer policy.

The pipeline mirrors the usual two-stage recipe: fit the scorer on
oracle-labeled decisions by cross-entropy, freeze that result as the
reference policy, then improve it online with group-relative policy
optimization — per-state groups of sampled actions, group-normalized
advantages, a clipped ratio surrogate, and a KL penalty to the frozen
reference. A small exact-MDP harness checks the classic policy
improvement lower bound on every update when the state space is
enumerable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .evaluation import avg_latency, drop_rate
from .lookahead import LookaheadConfig, impact, shaped_reward
from .model import candidate_latency, generalized_cost
from .policy import (
    PolicyParams,
    action_distribution,
    featurize,
    log_probs,
    sample_action,
    save_checkpoint,
    scorer_policy,
    zero_params,
)
from .simulator import Environment, derive_seed, run_episode


class UpdateRejectedError(RuntimeError):
    """Gradient was non-finite; parameters were left untouched."""


@dataclass(frozen=True)
class TrainConfig:
    # step size for the low-dimensional scorer; LLM-scale policies use ~5e-6
    learning_rate: float = 1e-2
    group_size: int = 8
    clip_eps: float = 0.2
    kl_coeff: float = 0.005
    discount: float = 0.99
    adv_eps: float = 1e-4
    iterations: int = 300
    states_per_batch: int = 16
    eval_interval: int = 50
    eval_episodes: int = 3
    sft_learning_rate: float = 0.5
    sft_epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_coeff < 0:
            raise ValueError("kl_coeff must be >= 0")
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.adv_eps <= 0:
            raise ValueError("adv_eps must be > 0")
        for name in ("learning_rate", "iterations", "states_per_batch", "sft_learning_rate", "sft_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class UpdateDiagnostics:
    mean_group_reward: float
    mean_advantage: float
    mean_clip_fraction: float
    kl_to_old: float
    kl_to_ref: float
    surrogate_value: float
    improvement_lower_bound: float | None = None


@dataclass
class GroupSample:
    """One state's sampled action group for a GRPO update."""

    features: np.ndarray       # (num_actions, dim)
    actions: np.ndarray        # (G,)
    log_probs_old: np.ndarray  # (G,)
    rewards: np.ndarray        # (G,)


def nll_loss(params: PolicyParams, samples: Sequence[tuple[np.ndarray, int]]) -> float:
    """Mean cross-entropy of the scorer against labels."""
    total = 0.0
    for features, label in samples:
        total -= log_probs(params, features)[label]
    return total / len(samples)


def sft_fit(
    samples: Sequence[tuple[np.ndarray, int]],
    init: PolicyParams,
    config: TrainConfig,
) -> tuple[PolicyParams, list[float]]:
    """Cross-entropy fit on (features, oracle label) pairs.

    Full-batch gradient descent with backtracking, so the returned loss
    history is non-increasing. Returns the fitted params and the recorded
    losses (initial value first).
    """
    if not samples:
        raise ValueError("sft_fit needs a non-empty dataset")
    for features, label in samples:
        if not 0 <= label < len(features):
            raise ValueError(f"label {label} invalid for {len(features)} candidates")

    params = init.copy()
    lr = config.sft_learning_rate
    losses = [nll_loss(params, samples)]
    for _ in range(config.sft_epochs):
        grad = np.zeros_like(params.weights)
        for features, label in samples:
            probs = action_distribution(params, features)
            grad -= (features[label] - probs @ features) / params.temperature
        grad /= len(samples)

        while lr > 1e-9:
            trial = PolicyParams(params.weights - lr * grad, params.temperature)
            loss = nll_loss(trial, samples)
            if loss <= losses[-1] + 1e-12:
                params = trial
                losses.append(loss)
                lr = min(lr * 1.2, config.sft_learning_rate)
                break
            lr *= 0.5
        else:
            losses.append(losses[-1])
    return params, losses


def sample_group(
    params: PolicyParams,
    features: np.ndarray,
    group_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """G independent action draws with their log-probabilities under the
    sampling policy."""
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    logp = log_probs(params, features)
    probs = np.exp(logp)
    actions = rng.choice(len(probs), size=group_size, p=probs)
    return actions, logp[actions]


def group_advantages(rewards: Sequence[float], adv_eps: float) -> np.ndarray:
    """Group-relative advantages: (r - mean) / (population std + eps)."""
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise ValueError("a group needs at least 2 rewards")
    return (r - r.mean()) / (r.std() + adv_eps)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) for strictly positive discrete distributions."""
    return float(np.sum(p * (np.log(p) - np.log(q))))


def grpo_update(
    policy: PolicyParams,
    ref_policy: PolicyParams,
    batch: Sequence[GroupSample],
    config: TrainConfig,
) -> tuple[PolicyParams, UpdateDiagnostics]:
    """One ascent step on the clipped-ratio objective with KL-to-reference
    penalty. Surrogate statistics are measured at the incoming params;
    the KL diagnostics are measured after the step."""
    if not batch:
        raise ValueError("grpo_update needs a non-empty batch")

    theta = policy.weights
    temp = policy.temperature
    total_grad = np.zeros_like(theta)
    surrogate_terms: list[float] = []
    clip_flags: list[bool] = []
    all_advantages: list[float] = []
    all_rewards: list[float] = []

    for group in batch:
        probs = action_distribution(policy, group.features)
        logp = np.log(probs)
        mean_feature = probs @ group.features
        advantages = group_advantages(group.rewards, config.adv_eps)
        all_advantages.extend(advantages)
        all_rewards.extend(group.rewards)

        state_grad = np.zeros_like(theta)
        for a, logp_old, adv in zip(group.actions, group.log_probs_old, advantages):
            ratio = float(np.exp(logp[a] - logp_old))
            unclipped = ratio * adv
            clipped = float(np.clip(ratio, 1 - config.clip_eps, 1 + config.clip_eps)) * adv
            surrogate_terms.append(min(unclipped, clipped))
            clip_flags.append(unclipped > clipped)
            if unclipped <= clipped:  # clip inactive: ratio path carries gradient
                state_grad += adv * ratio * (group.features[a] - mean_feature) / temp
        state_grad /= len(group.actions)

        ref_probs = action_distribution(ref_policy, group.features)
        diff = logp - np.log(ref_probs)
        weighted = probs * diff
        kl_grad = (weighted @ group.features - weighted.sum() * mean_feature) / temp
        total_grad += state_grad - config.kl_coeff * kl_grad

    total_grad /= len(batch)
    if not np.all(np.isfinite(total_grad)):
        raise UpdateRejectedError("non-finite gradient; update rejected")

    updated = PolicyParams(theta + config.learning_rate * total_grad, temp)
    kl_to_old = float(
        np.mean(
            [
                kl_divergence(
                    action_distribution(updated, g.features),
                    action_distribution(policy, g.features),
                )
                for g in batch
            ]
        )
    )
    kl_to_ref = float(
        np.mean(
            [
                kl_divergence(
                    action_distribution(updated, g.features),
                    action_distribution(ref_policy, g.features),
                )
                for g in batch
            ]
        )
    )
    diagnostics = UpdateDiagnostics(
        mean_group_reward=float(np.mean(all_rewards)),
        mean_advantage=float(np.mean(all_advantages)),
        mean_clip_fraction=float(np.mean(clip_flags)),
        kl_to_old=kl_to_old,
        kl_to_ref=kl_to_ref,
        surrogate_value=float(np.mean(surrogate_terms)),
    )
    return updated, diagnostics


# ---------------------------------------------------------------------------
# Exact policy-improvement bound on an enumerable MDP


@dataclass(frozen=True)
class MicroMdp:
    """Tiny MDP with per-state-action candidate features so the scorer
    policy can act on it and be evaluated exactly."""

    transitions: np.ndarray  # (S, A, S), row-stochastic
    rewards: np.ndarray      # (S, A)
    features: np.ndarray     # (S, A, dim)
    start: np.ndarray        # (S,), initial distribution
    discount: float

    def __post_init__(self):
        s, a, s2 = self.transitions.shape
        if s != s2 or self.rewards.shape != (s, a) or self.features.shape[:2] != (s, a):
            raise ValueError("inconsistent MicroMdp shapes")
        if not np.allclose(self.transitions.sum(axis=2), 1.0, atol=1e-9):
            raise ValueError("transitions must be row-stochastic")
        if not np.isclose(self.start.sum(), 1.0):
            raise ValueError("start distribution must sum to 1")
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


@dataclass
class BoundReport:
    v_old: float
    v_new: float
    expected_advantage: float
    max_kl: float
    max_tv: float
    bound_constant: float
    lower_bound: float
    slack: float
    holds: bool
    pinsker_ok: bool


def policy_table(params: PolicyParams, mdp: MicroMdp) -> np.ndarray:
    return np.stack(
        [action_distribution(params, mdp.features[s]) for s in range(mdp.n_states)]
    )


def exact_state_values(pi: np.ndarray, mdp: MicroMdp) -> np.ndarray:
    """V^pi by solving the linear Bellman system."""
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    r_pi = np.einsum("sa,sa->s", pi, mdp.rewards)
    eye = np.eye(mdp.n_states)
    return np.linalg.solve(eye - mdp.discount * p_pi, r_pi)


def improvement_bound_check(
    old_params: PolicyParams, new_params: PolicyParams, mdp: MicroMdp
) -> BoundReport:
    """Exactly evaluate the policy improvement lower bound

        V(new) >= V(old) + E_{d_old, new}[A_old] / (1 - eta)
                  - B * sqrt(max_s KL(new(.|s) || old(.|s)))

    with B = 2 * eta * max|A_old| / (1 - eta)^2 * sqrt(1/2), alongside the
    state-wise Pinsker check TV <= sqrt(KL / 2). Refuses MDPs too large
    for exact evaluation.
    """
    if mdp.n_states > 200:
        raise ValueError("micro-MDP too large for exact policy evaluation (max 200 states)")
    eta = mdp.discount
    pi_old = policy_table(old_params, mdp)
    pi_new = policy_table(new_params, mdp)

    v_old = exact_state_values(pi_old, mdp)
    v_new = exact_state_values(pi_new, mdp)
    q_old = mdp.rewards + eta * np.einsum("sat,t->sa", mdp.transitions, v_old)
    a_old = q_old - v_old[:, None]

    p_old = np.einsum("sa,sat->st", pi_old, mdp.transitions)
    eye = np.eye(mdp.n_states)
    visit = (1 - eta) * np.linalg.solve((eye - eta * p_old).T, mdp.start)

    expected_advantage = float(visit @ np.einsum("sa,sa->s", pi_new, a_old))
    kl_per_state = np.array(
        [kl_divergence(pi_new[s], pi_old[s]) for s in range(mdp.n_states)]
    )
    tv_per_state = 0.5 * np.abs(pi_new - pi_old).sum(axis=1)
    max_kl = float(kl_per_state.max())
    bound_constant = 2 * eta * float(np.abs(a_old).max()) / (1 - eta) ** 2 * np.sqrt(0.5)

    value_old = float(mdp.start @ v_old)
    value_new = float(mdp.start @ v_new)
    lower = value_old + expected_advantage / (1 - eta) - bound_constant * np.sqrt(max_kl)
    slack = value_new - lower
    pinsker_ok = bool(np.all(tv_per_state <= np.sqrt(kl_per_state / 2) + 1e-12))
    return BoundReport(
        v_old=value_old,
        v_new=value_new,
        expected_advantage=expected_advantage,
        max_kl=max_kl,
        max_tv=float(tv_per_state.max()),
        bound_constant=bound_constant,
        lower_bound=lower,
        slack=slack,
        holds=slack >= -1e-9,
        pinsker_ok=pinsker_ok,
    )


# ---------------------------------------------------------------------------
# Online training pipeline


class _DecisionStream:
    """Endless stream of (env, task) decision points over fresh seeded
    episodes. The caller must step the environment between draws."""

    def __init__(self, env_factory: Callable[[int], Environment], base_seed: int):
        self._factory = env_factory
        self._base_seed = base_seed
        self._episode = -1
        self._env: Environment | None = None
        self._slot = 0
        self._queue: list = []

    def next(self):
        while True:
            if self._queue:
                return self._env, self._queue.pop(0)
            if self._env is None or self._slot >= self._env.config.episode_slots:
                self._episode += 1
                self._env = self._factory(derive_seed(self._base_seed, 3, self._episode))
                self._slot = 0
            self._env.slot = self._slot
            self._queue = self._env.sample_arrivals()
            self._slot += 1


def train(
    env_factory: Callable[[int], Environment],
    config: TrainConfig,
    lookahead: LookaheadConfig | None = None,
    sft_samples: Sequence[tuple[np.ndarray, int]] | None = None,
    abort_checkpoint=None,
) -> tuple[PolicyParams, list[dict]]:
    """Full pipeline: supervised fit (when samples are given, else zero
    init with a uniform reference), freeze reference, then iterate GRPO
    batches collected from live episodes.

    Candidate rewards are scored against a snapshot of the observed state
    (shaped with the look-ahead impact when enabled); the real environment
    then steps with a fresh policy draw. Environment randomness never
    depends on whether look-ahead shaping is enabled. Deterministic per
    config seed.
    """
    rng_policy = np.random.default_rng(derive_seed(config.seed, 1))
    rng_lookahead = np.random.default_rng(
        derive_seed(config.seed, 2, lookahead.seed_stream if lookahead else 0)
    )

    if sft_samples:
        params, _ = sft_fit(sft_samples, zero_params(), config)
    else:
        params = zero_params()  # degraded mode: uniform start and reference
    ref = params.copy()

    stream = _DecisionStream(env_factory, config.seed)
    log: list[dict] = []
    try:
        for iteration in range(config.iterations):
            old = params.copy()  # sampling policy for this batch
            batch: list[GroupSample] = []
            batch_task_bits = 0.0
            for _ in range(config.states_per_batch):
                env, task = stream.next()
                batch_task_bits += task.size_bits
                state = env.observe(task)
                features = featurize(state)
                actions, logp_old = sample_group(old, features, config.group_size, rng_policy)
                rewards = np.empty(len(actions))
                for i, action in enumerate(actions):
                    cost = generalized_cost(
                        candidate_latency(state, int(action)), task, env.cost_params
                    )
                    if lookahead is not None:
                        c_imp = impact(
                            state,
                            int(action),
                            env.channel,
                            env.cost_params,
                            lookahead,
                            rng_lookahead,
                            env.config.num_users,
                        )
                        rewards[i] = shaped_reward(cost, c_imp, lookahead)
                    else:
                        rewards[i] = -cost
                batch.append(GroupSample(features, actions, logp_old, rewards))
                real_action = sample_action(old, features, rng_policy)
                env.step(task, real_action)

            params, diag = grpo_update(old, ref, batch, config)
            record = {
                "iteration": iteration,
                "mean_reward": diag.mean_group_reward,
                "kl_to_old": diag.kl_to_old,
                "kl_to_ref": diag.kl_to_ref,
                "clip_fraction": diag.mean_clip_fraction,
                "surrogate": diag.surrogate_value,
                "batch_task_bits": batch_task_bits,
            }
            if config.eval_interval and (iteration + 1) % config.eval_interval == 0:
                record["eval"] = _eval_snapshot(env_factory, params, config)
            log.append(record)
    except Exception:
        if abort_checkpoint is not None:
            save_checkpoint(params, abort_checkpoint, {"aborted_at_iteration": len(log)})
        raise
    return params, log


def _eval_snapshot(env_factory, params: PolicyParams, config: TrainConfig) -> dict:
    costs: list[float] = []
    deadlines: list[float] = []
    for i in range(config.eval_episodes):
        env = env_factory(derive_seed(config.seed, 4, i))
        trace = run_episode(env, scorer_policy(params))
        for rec in trace.records:
            costs.append(rec.cost)
            deadlines.append(rec.state.task.deadline_slots)
    if not costs:
        return {"avg_latency": float("nan"), "drop_rate": float("nan")}
    return {"avg_latency": avg_latency(costs), "drop_rate": drop_rate(costs, deadlines)}


def save_training_log(log: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record) + "\n")
