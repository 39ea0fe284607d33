import copy
import os
import sys
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

# Use a temporary SQLite database
os.environ["EDGEBENCH_DATABASE_URL"] = "sqlite:///./test.db"
# Sweeps run in-process under test
os.environ["EDGEBENCH_THREADS"] = "1"
# Allow importing backend code
sys.path.append(str(Path(__file__).resolve().parent.parent / "edgebench_backend"))

from app.main import app
from app.database import Base, engine, init_db
from app.scenario import validate_config
from app.state import SystemState, TaskStatus

# One MD 10 m from one ES: gain 1e-6, snr 1 at full bandwidth, so r = 2 and
# one core serves c = 4 tasks per slot.
TINY_SCENARIO = {
    "scenario_id": "tiny",
    "num_mds": 1,
    "num_ess": 1,
    "horizon": 50,
    "slot_duration": 0.1,
    "area_side": 100.0,
    "es_positions": [[50.0, 50.0]],
    "md_positions": [[50.0, 60.0]],
    "task_size_bits": 50000.0,
    "task_cycles": 25000000.0,
    "arrival_rates": 0.3,
    "power_levels": [0.0, 0.1],
    "bandwidth_hz": 1000000.0,
    "noise_psd": 1e-13,
    "reference_gain": 0.001,
    "channel_states": [1.0],
    "channel_transition": [[1.0]],
    "cores_per_es": 1,
    "core_speed_hz": 1000000000.0,
    "policy_id": "transmission",
}


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def db_setup():
    Base.metadata.drop_all(bind=engine)
    init_db()
    yield
    if os.path.exists("test.db"):
        os.remove("test.db")
    engine.dispose()


@pytest.fixture
def scenario_data():
    def _data(**overrides):
        data = copy.deepcopy(TINY_SCENARIO)
        data.update(overrides)
        return data

    return _data


@pytest.fixture
def make_config(scenario_data):
    def _make(**overrides):
        return validate_config(scenario_data(**overrides))

    return _make


@pytest.fixture
def make_state():
    """SystemState holding real ledger tasks in the given queues."""

    def _make(cfg, q=None, k=None, q_local=None, channel=None, slot=0):
        state = SystemState.initial(cfg)
        state.slot = slot
        for i, n in enumerate(q or []):
            for _ in range(n):
                task = state.new_task(i, TaskStatus.MD_QUEUE)
                state.md_queues[i].append(task.task_id)
        if k is not None:
            for (i, j), n in np.ndenumerate(np.asarray(k)):
                for _ in range(int(n)):
                    task = state.new_task(i, TaskStatus.ES_QUEUE)
                    task.es = j
                    state.es_queues[i][j].append(task.task_id)
        for i, n in enumerate(q_local or []):
            for _ in range(n):
                task = state.new_task(i, TaskStatus.LOCAL_QUEUE)
                state.local_queues[i].append(task.task_id)
        if channel is not None:
            state.channel_idx = np.asarray(channel, dtype=np.int64)
        return state

    return _make
