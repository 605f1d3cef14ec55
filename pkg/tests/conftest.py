import numpy as np
import pytest

from mecoffload import (
    CostParams,
    DeviceState,
    ServerState,
    SimConfig,
    SystemState,
    Task,
)


def make_task(size_bits=4e6, user=0, density=297.0, deadline=10.0, task_id=0):
    return Task(
        id=task_id,
        user=user,
        size_bits=size_bits,
        density_cycles_per_bit=density,
        deadline_slots=deadline,
    )


def make_random_state(rng, num_servers=None, slot_seconds=0.1):
    """Valid SystemState with randomized load, rates, and history."""
    count = int(rng.integers(1, 9)) if num_servers is None else num_servers
    servers = []
    for i in range(count):
        hist_n = int(rng.integers(0, 6))
        servers.append(
            ServerState(
                id=i + 1,
                capacity_hz=float(rng.uniform(20e9, 48e9)),
                active_tasks=int(rng.integers(0, 5)),
                backlog_bits=float(rng.uniform(0, 30e6)),
                history=tuple(float(h) for h in rng.uniform(0, 30e6, hist_n)),
            )
        )
    task = make_task(size_bits=float(rng.uniform(2e6, 5e6)), user=int(rng.integers(0, 3)))
    device = DeviceState(2e9, float(rng.uniform(0, 10e6)))
    rates = tuple(float(r) for r in rng.uniform(7e6, 21e6, count))
    return SystemState(
        task=task,
        uplink_rates_bps=rates,
        device=device,
        servers=tuple(servers),
        slot=0,
        slot_seconds=slot_seconds,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def default_config():
    return SimConfig(seed=7)


@pytest.fixture
def cost_params():
    return CostParams(deadline_penalty=10.0, slot_seconds=0.1)
