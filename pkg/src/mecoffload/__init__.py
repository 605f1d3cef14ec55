"""Desk-scale MEC task-offloading laboratory.

Queue-aware delay physics, a seeded decision environment, an exhaustive
one-step oracle, look-ahead reward shaping, a topology-agnostic scorer
policy trained by supervised imitation plus GRPO, the full evaluation
metric suite, and an optional remote chat-model policy.
"""

from .model import (
    ChannelModel,
    CostParams,
    DeviceState,
    InvalidActionError,
    ServerState,
    SystemState,
    Task,
    candidate_latency,
    edge_latency,
    effective_rate,
    generalized_cost,
    latency_components,
    local_latency,
    uplink_rate,
)
from .simulator import (
    ConfigurationError,
    Environment,
    EpisodeError,
    EpisodeTrace,
    SimConfig,
    StepRecord,
    derive_seed,
    run_episode,
)
from .oracle import evaluate_all, oracle_action
from .lookahead import (
    LookaheadConfig,
    LookaheadShaper,
    discounted_return,
    impact,
    make_lookahead_greedy,
    sample_future_tasks,
    shaped_reward,
    virtual_transition,
)
from .prompts import (
    DatasetRecord,
    PromptParseError,
    PromptStyle,
    export_dataset,
    generate_labeled_states,
    load_dataset,
    parse_prompt,
    prompt_roundtrip_policy,
    serialize_state,
)
from .policy import (
    FEATURE_DIM,
    FEATURE_NAMES,
    PolicyParams,
    action_distribution,
    baseline_policy,
    featurize,
    load_checkpoint,
    log_prob_gradient,
    sample_action,
    save_checkpoint,
    scorer_policy,
    zero_params,
)
from .training import (
    BoundReport,
    GroupSample,
    MicroMdp,
    TrainConfig,
    UpdateDiagnostics,
    UpdateRejectedError,
    group_advantages,
    grpo_update,
    improvement_bound_check,
    sample_group,
    sft_fit,
    train,
)
from .evaluation import (
    MetricsReport,
    avg_latency,
    drop_rate,
    evaluate_policy,
    load_balance,
    perf_ratio,
    sweep,
)

__version__ = "0.1.0"
