"""Inter-ES task migration over backhaul links.

A link is a pipe with a delay and a per-slot capacity: zero or one slot of
delay stands for a wired interconnect, longer delays for tasks carried by
vehicles between regions.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np

from .scenario import ValidatedConfig
from .state import DropReason, Migration, SystemState, TaskStatus, TransitBatch


def service_rate(cfg: ValidatedConfig, es: int) -> int:
    """Tasks per slot ES `es` completes with every core busy."""
    per_core = cfg.core_cycle_budget / cfg.scenario.task_cycles
    return int(np.floor(cfg.cores[es] * per_core + 1e-9))


def plan_migrations(
    state: SystemState, cfg: ValidatedConfig, threshold: Optional[float] = None
) -> List[Migration]:
    delta = cfg.scenario.migration_threshold if threshold is None else threshold
    k_es = state.k_es.copy()
    backlog = k_es.sum(axis=0)
    plan: List[Migration] = []

    for idx, link in enumerate(cfg.scenario.backhaul_links):
        diff = int(backlog[link.es_a] - backlog[link.es_b])
        src, dst = (link.es_a, link.es_b) if diff > 0 else (link.es_b, link.es_a)
        gap = abs(diff)
        delay_adjust = link.delay_slots * service_rate(cfg, dst)
        if gap <= delta + 2 * delay_adjust:
            continue

        remaining = min(link.capacity_tasks_per_slot, gap // 2)
        while remaining > 0:
            md = int(np.argmax(k_es[:, src]))
            take = int(min(remaining, k_es[md, src]))
            if take == 0:
                break
            plan.append(Migration(link=idx, src=src, dst=dst, md=md, count=take))
            k_es[md, src] -= take
            backlog[src] -= take
            if link.delay_slots == 0:
                k_es[md, dst] += take
                backlog[dst] += take
            remaining -= take
    return plan


def dispatch_migrations(
    state: SystemState, migrations, cfg: ValidatedConfig
) -> int:
    """Pull migrating tasks off their queues and put them in transit."""
    moved = 0
    links = cfg.scenario.backhaul_links
    for mig in migrations:
        queue = state.es_queues[mig.md][mig.src]
        count = min(mig.count, len(queue))
        if count == 0:
            continue
        ids = tuple(queue.popleft() for _ in range(count))
        arrive = state.slot + links[mig.link].delay_slots
        for tid in ids:
            state.tasks[tid].move(TaskStatus.IN_TRANSIT, es=mig.dst, arrive_slot=arrive)
        state.in_transit.append(
            TransitBatch(
                task_ids=ids,
                md=mig.md,
                src=mig.src,
                dst=mig.dst,
                link=mig.link,
                arrive_slot=arrive,
            )
        )
        moved += count
    return moved


def advance_in_transit(
    state: SystemState, es_capacity: Optional[int] = None
) -> Tuple[List[TransitBatch], List[int]]:
    """Deliver batches due this slot.

    Returns the delivered batches and the ids of tasks dropped because the
    destination queue was full.
    """
    delivered: List[TransitBatch] = []
    dropped: List[int] = []
    pending: List[TransitBatch] = []
    for batch in state.in_transit:
        if batch.arrive_slot > state.slot:
            pending.append(batch)
            continue
        queue = state.es_queues[batch.md][batch.dst]
        for tid in batch.task_ids:
            task = state.tasks[tid]
            if es_capacity is not None and len(queue) >= es_capacity:
                task.drop(state.slot, DropReason.OVERFLOW)
                dropped.append(tid)
                continue
            task.move(TaskStatus.ES_QUEUE, es=batch.dst)
            queue.append(tid)
        delivered.append(batch)
    state.in_transit = pending
    if dropped:
        logging.info("slot %d: %d migrated tasks dropped on arrival", state.slot, len(dropped))
    return delivered, dropped
