from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np

from .errors import ActionInvalid
from .scenario import ValidatedConfig


class TaskStatus(str, Enum):
    MD_QUEUE = "md_queue"
    LOCAL_QUEUE = "local_queue"
    ES_QUEUE = "es_queue"
    IN_TRANSIT = "in_transit"
    COMPLETED = "completed"
    DROPPED = "dropped"


class DropReason(str, Enum):
    DEADLINE = "deadline"
    OVERFLOW = "overflow"


_NEXT = {
    TaskStatus.MD_QUEUE: {TaskStatus.ES_QUEUE, TaskStatus.DROPPED},
    TaskStatus.LOCAL_QUEUE: {TaskStatus.COMPLETED, TaskStatus.DROPPED},
    TaskStatus.ES_QUEUE: {
        TaskStatus.ES_QUEUE,
        TaskStatus.IN_TRANSIT,
        TaskStatus.COMPLETED,
        TaskStatus.DROPPED,
    },
    TaskStatus.IN_TRANSIT: {TaskStatus.ES_QUEUE, TaskStatus.DROPPED},
    TaskStatus.COMPLETED: set(),
    TaskStatus.DROPPED: set(),
}


@dataclass(slots=True)
class TaskEntry:
    task_id: int
    owner_md: int
    born_slot: int
    status: TaskStatus
    es: Optional[int] = None
    arrive_slot: Optional[int] = None
    end_slot: Optional[int] = None
    reason: Optional[DropReason] = None
    energy_spent: float = 0.0

    def move(self, status: TaskStatus, es: Optional[int] = None, arrive_slot=None):
        if status not in _NEXT[self.status]:
            raise ValueError(
                f"task {self.task_id} cannot move from {self.status.value} to {status.value}"
            )
        self.status = status
        self.es = es
        self.arrive_slot = arrive_slot

    def complete(self, slot: int):
        self.move(TaskStatus.COMPLETED, es=self.es)
        self.end_slot = slot

    def drop(self, slot: int, reason: DropReason):
        self.move(TaskStatus.DROPPED)
        self.end_slot = slot
        self.reason = reason

    @property
    def latency(self) -> Optional[int]:
        if self.status is TaskStatus.COMPLETED:
            return self.end_slot - self.born_slot
        return None


@dataclass(frozen=True)
class Migration:
    link: int
    src: int
    dst: int
    md: int
    count: int


@dataclass
class TransitBatch:
    task_ids: Tuple[int, ...]
    md: int
    src: int
    dst: int
    link: int
    arrive_slot: int


@dataclass
class SystemState:
    slot: int
    channel_idx: np.ndarray
    md_queues: List[Deque[int]]
    es_queues: List[List[Deque[int]]]
    local_queues: List[Deque[int]]
    in_transit: List[TransitBatch] = field(default_factory=list)
    tasks: Dict[int, TaskEntry] = field(default_factory=dict)
    next_task_id: int = 0
    arrivals_total: int = 0
    completions_total: int = 0
    drops_total: int = 0

    @classmethod
    def initial(cls, cfg: ValidatedConfig) -> "SystemState":
        U, J = cfg.num_mds, cfg.num_ess
        return cls(
            slot=0,
            channel_idx=np.zeros((U, J), dtype=np.int64),
            md_queues=[deque() for _ in range(U)],
            es_queues=[[deque() for _ in range(J)] for _ in range(U)],
            local_queues=[deque() for _ in range(U)],
        )

    @property
    def num_mds(self) -> int:
        return len(self.md_queues)

    @property
    def num_ess(self) -> int:
        return len(self.es_queues[0]) if self.es_queues else 0

    @property
    def q_md(self) -> np.ndarray:
        return np.fromiter((len(q) for q in self.md_queues), dtype=np.int64)

    @property
    def k_es(self) -> np.ndarray:
        return np.array(
            [[len(q) for q in row] for row in self.es_queues], dtype=np.int64
        ).reshape(self.num_mds, self.num_ess)

    @property
    def q_local(self) -> np.ndarray:
        return np.fromiter((len(q) for q in self.local_queues), dtype=np.int64)

    @property
    def es_backlog(self) -> np.ndarray:
        return self.k_es.sum(axis=0)

    @property
    def in_transit_count(self) -> int:
        return sum(len(batch.task_ids) for batch in self.in_transit)

    def residual(self) -> int:
        return int(
            self.q_md.sum()
            + self.k_es.sum()
            + self.q_local.sum()
            + self.in_transit_count
        )

    def new_task(self, md: int, status: TaskStatus) -> TaskEntry:
        task = TaskEntry(
            task_id=self.next_task_id, owner_md=md, born_slot=self.slot, status=status
        )
        self.tasks[task.task_id] = task
        self.next_task_id += 1
        self.arrivals_total += 1
        return task

    def prune_finished(self) -> int:
        """Forget completed and dropped tasks; returns how many were removed."""
        finished = [
            tid for tid, task in self.tasks.items()
            if task.status in (TaskStatus.COMPLETED, TaskStatus.DROPPED)
        ]
        for tid in finished:
            del self.tasks[tid]
        return len(finished)

    def copy(self) -> "SystemState":
        return SystemState(
            slot=self.slot,
            channel_idx=self.channel_idx.copy(),
            md_queues=[deque(q) for q in self.md_queues],
            es_queues=[[deque(q) for q in row] for row in self.es_queues],
            local_queues=[deque(q) for q in self.local_queues],
            in_transit=[replace(batch) for batch in self.in_transit],
            tasks={tid: replace(task) for tid, task in self.tasks.items()},
            next_task_id=self.next_task_id,
            arrivals_total=self.arrivals_total,
            completions_total=self.completions_total,
            drops_total=self.drops_total,
        )


@dataclass(frozen=True)
class Action:
    power: np.ndarray
    assoc: np.ndarray
    cores: np.ndarray
    local_admit: np.ndarray
    migrate: Tuple[Migration, ...] = ()

    @classmethod
    def idle(cls, cfg: ValidatedConfig) -> "Action":
        U, J = cfg.num_mds, cfg.num_ess
        return cls(
            power=np.zeros(U),
            assoc=np.full(U, -1, dtype=np.int64),
            cores=np.zeros((U, J), dtype=np.int64),
            local_admit=np.zeros(U),
        )

    @property
    def eta(self) -> np.ndarray:
        """Association as a 0/1 matrix with at most one 1 per row."""
        U, J = self.cores.shape
        eta = np.zeros((U, J), dtype=np.int64)
        rows = np.flatnonzero(self.assoc >= 0)
        eta[rows, self.assoc[rows]] = 1
        return eta

    def with_migrations(self, migrations) -> "Action":
        return replace(self, migrate=tuple(migrations))


def validate_action(action: Action, state: SystemState, cfg: ValidatedConfig):
    U, J = cfg.num_mds, cfg.num_ess
    if action.power.shape != (U,) or action.assoc.shape != (U,):
        raise ActionInvalid("power and assoc need one entry per MD")
    if action.cores.shape != (U, J) or action.local_admit.shape != (U,):
        raise ActionInvalid("cores must be (MD, ES) and local_admit per MD")
    if not np.isin(action.power, cfg.power_levels).all():
        raise ActionInvalid("power outside the configured levels")
    if ((action.assoc < -1) | (action.assoc >= J)).any():
        raise ActionInvalid("association to an unknown ES")
    if ((action.power > 0) & (action.assoc < 0)).any():
        raise ActionInvalid("transmit power without an association")
    if (action.cores < 0).any():
        raise ActionInvalid("negative core allocation")
    over = np.flatnonzero(action.cores.sum(axis=0) > cfg.cores)
    if over.size:
        raise ActionInvalid(f"ES {int(over[0])} allocates more cores than it has")
    if (action.local_admit < 0).any():
        raise ActionInvalid("negative local admission")
    if (action.local_admit > 0).any() and not cfg.local_enabled:
        raise ActionInvalid("local admission without local compute")

    links = cfg.scenario.backhaul_links
    k_es = state.k_es
    per_link: Dict[int, int] = {}
    per_queue: Dict[Tuple[int, int], int] = {}
    directions: Dict[int, set] = {}
    for mig in action.migrate:
        if not 0 <= mig.link < len(links):
            raise ActionInvalid(f"migration over unknown link {mig.link}")
        link = links[mig.link]
        if {mig.src, mig.dst} != {link.es_a, link.es_b}:
            raise ActionInvalid(f"link {mig.link} does not join ES {mig.src} and {mig.dst}")
        key = (mig.md, mig.src)
        per_queue[key] = per_queue.get(key, 0) + mig.count
        if mig.count < 0 or per_queue[key] > k_es[key]:
            raise ActionInvalid(f"migration of {mig.count} tasks exceeds the queue")
        per_link[mig.link] = per_link.get(mig.link, 0) + mig.count
        directions.setdefault(mig.link, set()).add(mig.src)
    for idx, total in per_link.items():
        if total > links[idx].capacity_tasks_per_slot:
            raise ActionInvalid(f"link {idx} over capacity")
        if len(directions[idx]) > 1:
            raise ActionInvalid(f"link {idx} used in both directions")
