"""Text serialization of system states, prompt perturbations, dataset export.

A state renders as one task line, one device line, one key-value line per
server (so the template scales with any server count), and a fixed
instruction. Physical values carry unit tokens, and the recent backlog
history of each server is embedded as a bracketed sequence. Prompts can
be parsed back into a SystemState, which is how the perturbation modes
are verified to preserve decision-relevant information.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .model import DeviceState, ServerState, SystemState, Task
from .oracle import oracle_action
from .simulator import Environment, SimConfig, derive_seed

PROMPT_MODES = ("standard", "shuffled_params", "noisy_text", "unit_variation")

INSTRUCTION = (
    "Choose the execution location for this task. "
    'Reply with exactly one decision: "Execute Locally" or "Offload to Server <k>".'
)

# Significant digits printed for every physical value. Six digits keep the
# parsed-back one-step argmin identical to the source state's; at four the
# best two candidates tie within rounding error on ~0.1% of states.
PROMPT_PRECISION = 6

# unit token -> multiplier into base units (bits, Hz, bit/s, seconds, cycles/bit)
_UNIT_SCALE = {
    "GHz": 1e9,
    "MHz": 1e6,
    "Mbits": 1e6,
    "kbits": 1e3,
    "Mbps": 1e6,
    "kbps": 1e3,
    "s": 1.0,
    "ms": 1e-3,
    "cycles/bit": 1.0,
    "kcycles/bit": 1e3,
}
# equivalent-scale rewrite used by the unit_variation mode
_UNIT_ALTERNATE = {
    "GHz": "MHz",
    "Mbits": "kbits",
    "Mbps": "kbps",
    "s": "ms",
    "cycles/bit": "kcycles/bit",
}

_FILLER_NOTES = (
    "Note: routine telemetry heartbeat received from the monitoring agent.",
    "Note: the weather report for the service area mentions light rain.",
    "Note: firmware inventory audit is scheduled for next maintenance window.",
    "Note: a background log-rotation job completed without warnings.",
    "Note: cafeteria menu updates are unrelated to scheduling decisions.",
    "Note: the operations dashboard color theme was changed yesterday.",
)


class PromptParseError(ValueError):
    """Prompt text does not contain a recoverable system description."""


@dataclass(frozen=True)
class PromptStyle:
    mode: str = "standard"
    noise_seed: int = 0

    def __post_init__(self):
        if self.mode not in PROMPT_MODES:
            raise ValueError(f"unknown prompt mode {self.mode!r}; expected one of {PROMPT_MODES}")


STANDARD_STYLE = PromptStyle()


@dataclass(frozen=True)
class DatasetRecord:
    prompt: str
    label_action: int
    label_text: str
    state_digest: dict


def label_text_for(action: int) -> str:
    return "Execute Locally" if action == 0 else f"Offload to Server {action}"


def _fmt(value: float) -> str:
    """Positional decimal with PROMPT_PRECISION significant digits."""
    text = f"{float(value):.{PROMPT_PRECISION}g}"
    if "e" in text or "E" in text:
        text = np.format_float_positional(float(text), trim="-")
        if text.endswith("."):
            text = text[:-1]
    return text


@dataclass
class _Clause:
    key: str
    value: float | int | list[float]
    unit: str | None

    def render(self) -> str:
        if self.unit is None:
            return f"{self.key} {self.value}"
        if isinstance(self.value, list):
            inner = ", ".join(_fmt(v) for v in self.value)
            return f"{self.key} [{inner}] {self.unit}"
        return f"{self.key} {_fmt(self.value)} {self.unit}"


@dataclass
class _Block:
    label: str
    clauses: list[_Clause]
    shuffle: bool = False  # only server parameter lists get shuffled

    def render(self) -> str:
        return f"{self.label} " + ", ".join(c.render() for c in self.clauses) + "."


def _build_blocks(state: SystemState) -> list[_Block]:
    task = state.task
    blocks = [
        _Block(
            "Task request:",
            [
                _Clause("data size", task.size_bits / 1e6, "Mbits"),
                _Clause("compute density", task.density_cycles_per_bit, "cycles/bit"),
                _Clause("deadline", task.deadline_slots * state.slot_seconds, "s"),
                _Clause("source user", task.user, None),
            ],
        ),
        _Block(
            "Local device:",
            [
                _Clause("cpu frequency", state.device.local_freq_hz / 1e9, "GHz"),
                _Clause("queued backlog", state.device.local_backlog_bits / 1e6, "Mbits"),
            ],
        ),
    ]
    for srv, rate in zip(state.servers, state.uplink_rates_bps):
        blocks.append(
            _Block(
                f"Server {srv.id}:",
                [
                    _Clause("cpu frequency", srv.capacity_hz / 1e9, "GHz"),
                    _Clause("active tasks", srv.active_tasks, None),
                    _Clause("queued backlog", srv.backlog_bits / 1e6, "Mbits"),
                    _Clause("uplink rate", rate / 1e6, "Mbps"),
                    _Clause("backlog history", [h / 1e6 for h in srv.history], "Mbits"),
                ],
                shuffle=True,
            )
        )
    return blocks


def _render(blocks: list[_Block]) -> str:
    return "\n".join([b.render() for b in blocks] + [INSTRUCTION])


def serialize_state(state: SystemState, style: PromptStyle = STANDARD_STYLE) -> str:
    """Render a state as prompt text; standard mode is deterministic."""
    blocks = _build_blocks(state)
    if style.mode == "standard":
        return _render(blocks)
    return perturb(blocks, style)


def perturb(blocks: list[_Block], style: PromptStyle) -> str:
    """Apply one non-standard perturbation mode to a built prompt structure."""
    if style.mode == "standard":
        raise ValueError("perturb requires a non-standard mode")
    rng = np.random.default_rng(style.noise_seed)

    if style.mode == "shuffled_params":
        shuffled = []
        for block in blocks:
            clauses = list(block.clauses)
            if block.shuffle:
                order = rng.permutation(len(clauses))
                clauses = [clauses[i] for i in order]
            shuffled.append(_Block(block.label, clauses, block.shuffle))
        return _render(shuffled)

    if style.mode == "unit_variation":
        converted = []
        for block in blocks:
            clauses = []
            for clause in block.clauses:
                if clause.unit in _UNIT_ALTERNATE:
                    alt = _UNIT_ALTERNATE[clause.unit]
                    factor = _UNIT_SCALE[clause.unit] / _UNIT_SCALE[alt]
                    if isinstance(clause.value, list):
                        value = [v * factor for v in clause.value]
                    else:
                        value = clause.value * factor
                    clauses.append(_Clause(clause.key, value, alt))
                else:
                    clauses.append(clause)
            converted.append(_Block(block.label, clauses, block.shuffle))
        return _render(converted)

    # noisy_text: insert marked filler lines between the real lines
    lines = _render(blocks).split("\n")
    noisy = []
    for line in lines:
        noisy.append(line)
        if rng.random() < 0.7:
            noisy.append(str(rng.choice(_FILLER_NOTES)))
    return "\n".join(noisy)


_NUM = r"(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"


def _clause_value(line: str, key: str, units: tuple[str, ...]) -> float:
    for unit in units:
        m = re.search(rf"{re.escape(key)} {_NUM} {re.escape(unit)}(?:[,.]|$)", line)
        if m:
            return float(m.group(1)) * _UNIT_SCALE[unit]
    raise PromptParseError(f"missing clause {key!r} in line: {line!r}")


def _clause_int(line: str, key: str) -> int:
    m = re.search(rf"{re.escape(key)} (\d+)", line)
    if m is None:
        raise PromptParseError(f"missing clause {key!r} in line: {line!r}")
    return int(m.group(1))


def _clause_history(line: str) -> tuple[tuple[float, ...], str]:
    m = re.search(r"backlog history \[([^\]]*)\] (\w+)", line)
    if m is None:
        raise PromptParseError(f"missing backlog history in line: {line!r}")
    body, unit = m.group(1), m.group(2)
    if unit not in _UNIT_SCALE:
        raise PromptParseError(f"unknown history unit {unit!r}")
    scale = _UNIT_SCALE[unit]
    values = tuple(float(v) * scale for v in body.split(",")) if body.strip() else ()
    return values, unit


def parse_prompt(text: str, slot_seconds: float = 0.1) -> SystemState:
    """Rebuild a SystemState from prompt text (any perturbation mode).

    Values come back at the printed precision; slot/ids default to zero
    where the prompt does not carry them.
    """
    task_line = device_line = None
    server_lines: list[str] = []
    for raw in text.split("\n"):
        line = raw.strip()
        if not line or line.startswith("Note:") or line == INSTRUCTION:
            continue
        if line.startswith("Task request:"):
            task_line = line
        elif line.startswith("Local device:"):
            device_line = line
        elif line.startswith("Server "):
            server_lines.append(line)
    if task_line is None or device_line is None:
        raise PromptParseError("prompt lacks task or device description")

    size_bits = _clause_value(task_line, "data size", ("Mbits", "kbits"))
    density = _clause_value(task_line, "compute density", ("cycles/bit", "kcycles/bit"))
    deadline_s = _clause_value(task_line, "deadline", ("s", "ms"))
    user = _clause_int(task_line, "source user")
    task = Task(
        id=0,
        user=user,
        size_bits=size_bits,
        density_cycles_per_bit=density,
        deadline_slots=round(deadline_s / slot_seconds, 9),
    )

    device = DeviceState(
        local_freq_hz=_clause_value(device_line, "cpu frequency", ("GHz", "MHz")),
        local_backlog_bits=_clause_value(device_line, "queued backlog", ("Mbits", "kbits")),
    )

    servers = []
    rates = []
    for line in server_lines:
        sid = int(re.match(r"Server (\d+):", line).group(1))
        history, _ = _clause_history(line)
        servers.append(
            ServerState(
                id=sid,
                capacity_hz=_clause_value(line, "cpu frequency", ("GHz", "MHz")),
                active_tasks=_clause_int(line, "active tasks"),
                backlog_bits=_clause_value(line, "queued backlog", ("Mbits", "kbits")),
                history=history,
            )
        )
        rates.append(_clause_value(line, "uplink rate", ("Mbps", "kbps")))

    return SystemState(
        task=task,
        uplink_rates_bps=tuple(rates),
        device=device,
        servers=tuple(servers),
        slot=0,
        slot_seconds=slot_seconds,
    )


def prompt_roundtrip_policy(
    policy: Callable[[SystemState], int], style: PromptStyle, slot_seconds: float
) -> Callable[[SystemState], int]:
    """Wrap a policy so it only sees what survives the prompt text."""

    def decide(state: SystemState) -> int:
        return policy(parse_prompt(serialize_state(state, style), slot_seconds))

    return decide


def _digest(state: SystemState) -> dict:
    return {
        "slot": state.slot,
        "user": state.task.user,
        "size_bits": state.task.size_bits,
        "deadline_slots": state.task.deadline_slots,
        "density_cycles_per_bit": state.task.density_cycles_per_bit,
        "local_freq_hz": state.device.local_freq_hz,
        "local_backlog_bits": state.device.local_backlog_bits,
        "uplink_rates_bps": list(state.uplink_rates_bps),
        "servers": [
            [s.capacity_hz, s.active_tasks, s.backlog_bits] for s in state.servers
        ],
    }


def generate_labeled_states(
    config: SimConfig, count: int, max_episodes: int = 10_000
) -> list[tuple[SystemState, int]]:
    """Sample decision states from fresh seeded episodes driven by a random
    behavior policy; label each with the one-step oracle action."""
    if count < 1:
        raise ValueError("count must be >= 1")
    samples: list[tuple[SystemState, int]] = []
    episode = 0
    while len(samples) < count:
        if episode >= max_episodes:
            raise RuntimeError("could not collect enough states; arrival rate too low?")
        env = Environment(replace(config, seed=derive_seed(config.seed, 11, episode)))
        behavior = np.random.default_rng(derive_seed(config.seed, 13, episode))
        for slot in range(config.episode_slots):
            env.slot = slot
            for task in env.sample_arrivals():
                state = env.observe(task)
                if len(samples) < count:
                    samples.append((state, oracle_action(state, env.cost_params)[0]))
                env.step(task, int(behavior.integers(config.num_servers + 1)))
        episode += 1
    return samples


def export_dataset(
    config: SimConfig,
    count: int,
    style: PromptStyle,
    out_path,
) -> int:
    """Write `count` oracle-labeled prompt records, one JSON object per line.

    Deterministic per config seed; nothing is written if generation fails.
    """
    samples = generate_labeled_states(config, count)
    lines = []
    for state, label in samples:
        record = {
            "prompt": serialize_state(state, style),
            "label_action": label,
            "label_text": label_text_for(label),
            "state_digest": _digest(state),
        }
        lines.append(json.dumps(record))

    tmp_path = f"{out_path}.tmp"
    try:
        with open(tmp_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp_path, out_path)
    except OSError:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return len(lines)


def load_dataset(path) -> list[DatasetRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            records.append(
                DatasetRecord(
                    prompt=raw["prompt"],
                    label_action=int(raw["label_action"]),
                    label_text=raw["label_text"],
                    state_digest=raw["state_digest"],
                )
            )
    return records
