"""Physical delay and cost model of a slotted edge-offloading system.

Pure, stateless types and closed-form latency formulas: Shannon uplink
rates, processor-sharing execution on edge servers, backlog-induced
queueing delay, and a deadline-penalized cost reported in time slots.
All internal physics is SI (bits, Hz, seconds); only the cost converts
to slot units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class InvalidActionError(ValueError):
    """Action index outside {0 .. num_servers} for the given state."""


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


@dataclass(frozen=True)
class Task:
    """One offloadable job: who produced it, how big, how urgent."""

    id: int
    user: int
    size_bits: float
    density_cycles_per_bit: float
    deadline_slots: float

    def __post_init__(self):
        _require(self.size_bits > 0, "size_bits must be > 0")
        _require(self.density_cycles_per_bit > 0, "density_cycles_per_bit must be > 0")
        _require(self.deadline_slots > 0, "deadline_slots must be > 0")


@dataclass(frozen=True)
class ChannelModel:
    """Uplink rate source.

    Two modes:
      * ``direct``  -- rates drawn uniformly from ``rate_range_bps``
        (default; mean 14 Mbps for the default range).
      * ``faded``   -- Shannon rate B*log2(1 + SNR*g) with unit-mean
        exponential power gains g; build via :meth:`calibrated` to hit a
        target mean rate.
    """

    bandwidth_hz: float = 10e6
    tx_power_w: float = 1.0
    noise_power_w: float = 1.0
    mode: str = "direct"
    rate_range_bps: tuple[float, float] = (7e6, 21e6)

    def __post_init__(self):
        _require(self.bandwidth_hz > 0, "bandwidth_hz must be > 0")
        _require(self.tx_power_w > 0, "tx_power_w must be > 0")
        _require(self.noise_power_w > 0, "noise_power_w must be > 0")
        _require(self.mode in ("direct", "faded"), f"unknown channel mode {self.mode!r}")
        lo, hi = self.rate_range_bps
        _require(0 < lo <= hi, "rate_range_bps must satisfy 0 < low <= high")

    def draw_rates(self, rng: np.random.Generator, count: int) -> tuple[float, ...]:
        """Draw one uplink rate per server (block fading, fresh per decision)."""
        if count == 0:
            return ()
        if self.mode == "direct":
            lo, hi = self.rate_range_bps
            return tuple(float(r) for r in rng.uniform(lo, hi, count))
        gains = rng.exponential(1.0, count)
        return tuple(uplink_rate(self, float(g)) for g in gains)

    @classmethod
    def calibrated(
        cls,
        mean_rate_bps: float = 14e6,
        bandwidth_hz: float = 10e6,
        samples: int = 100_000,
        seed: int = 0,
        tol: float = 0.01,
    ) -> "ChannelModel":
        """Fading-mode channel whose mean rate matches ``mean_rate_bps``.

        The transmit SNR is fitted once by bisection against a fixed
        Monte Carlo draw of exponential gains, so construction is
        deterministic.
        """
        snr = _calibrate_snr(mean_rate_bps, bandwidth_hz, samples, seed, tol)
        return cls(bandwidth_hz=bandwidth_hz, tx_power_w=snr, noise_power_w=1.0, mode="faded")


@lru_cache(maxsize=8)
def _calibrate_snr(mean_rate_bps, bandwidth_hz, samples, seed, tol):
    gains = np.random.default_rng(seed).exponential(1.0, samples)
    target = mean_rate_bps / bandwidth_hz  # mean spectral efficiency, bit/s/Hz

    def efficiency(snr):
        return float(np.mean(np.log2(1.0 + snr * gains)))

    lo, hi = 1e-6, 1e9
    for _ in range(100):
        mid = math.sqrt(lo * hi)
        if efficiency(mid) < target:
            lo = mid
        else:
            hi = mid
    snr = math.sqrt(lo * hi)
    achieved = efficiency(snr) * bandwidth_hz
    if abs(achieved - mean_rate_bps) > tol * mean_rate_bps:
        raise ValueError(
            f"channel calibration missed target: {achieved:.4g} vs {mean_rate_bps:.4g} bps"
        )
    return snr


@dataclass(frozen=True)
class ServerState:
    """Observable snapshot of one edge server."""

    id: int
    capacity_hz: float
    active_tasks: int
    backlog_bits: float
    history: tuple[float, ...] = ()

    def __post_init__(self):
        _require(self.capacity_hz > 0, "capacity_hz must be > 0")
        _require(self.active_tasks >= 0, "active_tasks must be >= 0")
        _require(self.backlog_bits >= 0, "backlog_bits must be >= 0")


@dataclass(frozen=True)
class DeviceState:
    """Local execution side: CPU frequency and residual queued work."""

    local_freq_hz: float
    local_backlog_bits: float = 0.0

    def __post_init__(self):
        _require(self.local_freq_hz > 0, "local_freq_hz must be > 0")
        _require(self.local_backlog_bits >= 0, "local_backlog_bits must be >= 0")


@dataclass(frozen=True)
class SystemState:
    """Everything a policy observes when deciding one task."""

    task: Task
    uplink_rates_bps: tuple[float, ...]
    device: DeviceState
    servers: tuple[ServerState, ...]
    slot: int = 0
    slot_seconds: float = 0.1

    def __post_init__(self):
        _require(
            len(self.uplink_rates_bps) == len(self.servers),
            "one uplink rate per server required",
        )
        _require(all(r > 0 for r in self.uplink_rates_bps), "uplink rates must be > 0")
        _require(self.slot_seconds > 0, "slot_seconds must be > 0")

    @property
    def num_servers(self) -> int:
        return len(self.servers)


@dataclass(frozen=True)
class CostParams:
    """Deadline penalty (slot units) and slot duration for cost conversion."""

    deadline_penalty: float = 10.0
    slot_seconds: float = 0.1

    def __post_init__(self):
        _require(self.deadline_penalty >= 0, "deadline_penalty must be >= 0")
        _require(self.slot_seconds > 0, "slot_seconds must be > 0")


def uplink_rate(channel: ChannelModel, gain: float) -> float:
    """Shannon uplink rate in bit/s for a given channel power gain."""
    _require(gain >= 0, "gain must be >= 0")
    snr = channel.tx_power_w * gain / channel.noise_power_w
    return channel.bandwidth_hz * math.log2(1.0 + snr)


def effective_rate(server: ServerState) -> float:
    """Processor-sharing share for an arriving task: capacity / (active + 1)."""
    return server.capacity_hz / (server.active_tasks + 1)


def _local_components(task: Task, device: DeviceState) -> tuple[float, float, float]:
    f = device.local_freq_hz
    wait = device.local_backlog_bits * task.density_cycles_per_bit / f
    execute = task.size_bits * task.density_cycles_per_bit / f
    return 0.0, wait, execute


def _edge_components(task: Task, server: ServerState, uplink_bps: float) -> tuple[float, float, float]:
    _require(uplink_bps > 0, "uplink_bps must be > 0")
    f_eff = effective_rate(server)
    upload = task.size_bits / uplink_bps
    wait = server.backlog_bits * task.density_cycles_per_bit / f_eff
    execute = task.size_bits * task.density_cycles_per_bit / f_eff
    return upload, wait, execute


def local_latency(task: Task, device: DeviceState) -> float:
    """Seconds to finish on-device: queued residue first, then the task."""
    upload, wait, execute = _local_components(task, device)
    return upload + wait + execute


def edge_latency(task: Task, server: ServerState, uplink_bps: float) -> float:
    """Seconds to finish on a server: upload + backlog wait + shared execution."""
    upload, wait, execute = _edge_components(task, server, uplink_bps)
    return upload + wait + execute


def latency_components(state: SystemState, action: int) -> tuple[float, float, float]:
    """(upload, wait, execute) seconds for one candidate action."""
    _validate_action(state, action)
    if action == 0:
        return _local_components(state.task, state.device)
    return _edge_components(
        state.task, state.servers[action - 1], state.uplink_rates_bps[action - 1]
    )


def candidate_latency(state: SystemState, action: int) -> float:
    """Latency in seconds of running the state's task at the chosen location."""
    upload, wait, execute = latency_components(state, action)
    return upload + wait + execute


def generalized_cost(latency_s: float, task: Task, params: CostParams) -> float:
    """Latency in slots, plus a fixed penalty when it strictly exceeds the deadline."""
    _require(latency_s >= 0, "latency_s must be >= 0")
    slots = latency_s / params.slot_seconds
    penalty = params.deadline_penalty if slots > task.deadline_slots else 0.0
    return slots + penalty


def _validate_action(state: SystemState, action: int) -> None:
    if not isinstance(action, (int, np.integer)) or isinstance(action, bool):
        raise InvalidActionError(f"action must be an integer, got {action!r}")
    if not 0 <= action <= state.num_servers:
        raise InvalidActionError(
            f"action {action} outside 0..{state.num_servers}"
        )
