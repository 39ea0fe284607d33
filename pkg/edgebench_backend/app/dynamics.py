"""Slot-stepped evolution of the communication-computing tandem queues.

Within a slot the order is fixed: channels move, rates are computed,
computing queues are served, MD queues upload, migrations are applied and
in-transit batches delivered, local queues are served, arrivals are drawn,
expired tasks are dropped and the slot is recorded. A task therefore needs
at least one slot on the uplink and one on a core.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import ActionInvalid, ConservationError
from .multihop import advance_in_transit, dispatch_migrations, plan_migrations
from .randomness import RandomStreams, Stream
from .scenario import ValidatedConfig
from .schemas import ArrivalKind, RunSummary
from .state import (
    Action,
    DropReason,
    SystemState,
    TaskStatus,
    validate_action,
)

# Guards floor() against values like 1.9999999999 that should be 2.
FLOOR_EPS = 1e-9
# Slots between sweeps of finished tasks out of the ledger; latencies are
# streamed into the summary, so a trajectory only needs live entries.
PRUNE_EVERY = 256

Policy = Callable[[SystemState], Action]


@dataclass(frozen=True)
class RateRealization:
    r: np.ndarray
    c: np.ndarray
    actual_uplink: np.ndarray
    actual_served: np.ndarray


@dataclass(frozen=True)
class ArrivalRealization:
    a: np.ndarray
    task_ids: Tuple[Tuple[int, ...], ...] = ()


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    arrivals: np.ndarray
    admitted: np.ndarray
    uplinked: np.ndarray
    served: np.ndarray
    local_served: np.ndarray
    migrated: int
    drops_deadline: np.ndarray
    drops_overflow: np.ndarray
    energy_tx: np.ndarray
    energy_local: np.ndarray
    latencies: Tuple[int, ...]
    q_md: np.ndarray
    k_es: np.ndarray
    q_local: np.ndarray
    in_transit: int
    channel_idx: np.ndarray
    power: np.ndarray
    assoc: np.ndarray
    cores: np.ndarray
    rates: Optional[RateRealization] = field(default=None, compare=False)

    @property
    def completions(self) -> int:
        return int(self.served.sum() + self.local_served.sum())

    @property
    def energy(self) -> np.ndarray:
        return self.energy_tx + self.energy_local


def shannon_tasks(power, gain, share_hz, cfg: ValidatedConfig) -> np.ndarray:
    """Whole tasks one slot of Shannon capacity carries."""
    sc = cfg.scenario
    power = np.asarray(power, dtype=float)
    share_hz = np.asarray(share_hz, dtype=float)
    snr = power * gain / (sc.noise_psd * share_hz)
    bits = sc.slot_duration * share_hz * np.log2(1.0 + snr)
    return np.floor(bits / sc.task_size_bits + FLOOR_EPS).astype(np.int64)


def link_gains(channel_idx: np.ndarray, cfg: ValidatedConfig) -> np.ndarray:
    """Instantaneous gain of every (MD, ES) link."""
    return cfg.mean_gains * cfg.channel_states[channel_idx]


def draw_arrivals(
    cfg: ValidatedConfig, slot: int, rng: RandomStreams
) -> ArrivalRealization:
    gen = rng.generator(Stream.ARRIVALS, slot)
    rates = cfg.arrival_rates
    if cfg.scenario.arrival_kind == ArrivalKind.POISSON:
        a = gen.poisson(rates)
    else:
        a = (gen.random(rates.shape[0]) < rates).astype(np.int64)
    return ArrivalRealization(a=np.asarray(a, dtype=np.int64))


def evolve_channels(
    state: SystemState, cfg: ValidatedConfig, rng: RandomStreams
) -> np.ndarray:
    gen = rng.generator(Stream.CHANNELS, state.slot)
    u = gen.random(state.channel_idx.shape)
    cumulative = np.cumsum(cfg.channel_transition, axis=1)[state.channel_idx]
    new_idx = (u[..., None] >= cumulative).sum(axis=-1)
    return np.minimum(new_idx, len(cfg.channel_states) - 1).astype(np.int64)


def transmission_rate(
    state: SystemState, action: Action, cfg: ValidatedConfig
) -> np.ndarray:
    U, J = cfg.num_mds, cfg.num_ess
    r = np.zeros(U, dtype=np.int64)
    active = np.flatnonzero((action.power > 0) & (action.assoc >= 0))
    if active.size == 0:
        return r
    es = action.assoc[active]
    sharers = np.bincount(es, minlength=J)
    share = cfg.scenario.bandwidth_hz / sharers[es]
    gain = link_gains(state.channel_idx, cfg)[active, es]
    r[active] = shannon_tasks(action.power[active], gain, share, cfg)
    return r


def computing_rate(
    state: SystemState, action: Action, cfg: ValidatedConfig
) -> np.ndarray:
    per_core = cfg.core_cycle_budget / cfg.scenario.task_cycles
    return np.floor(action.cores * per_core + FLOOR_EPS).astype(np.int64)


def local_rate(cfg: ValidatedConfig) -> int:
    local = cfg.scenario.local_compute
    if local is None:
        return 0
    cycles = local.local_core_speed_hz * cfg.scenario.slot_duration
    return int(np.floor(cycles / cfg.scenario.task_cycles + FLOOR_EPS))


def _charge(state: SystemState, ids, fallback_queue, joules: float):
    """Spread `joules` over the tasks it moved, else on the head of line."""
    if joules <= 0:
        return
    if ids:
        share = joules / len(ids)
        for tid in ids:
            state.tasks[tid].energy_spent += share
    elif fallback_queue:
        state.tasks[fallback_queue[0]].energy_spent += joules


def _expire(state: SystemState, deadline: int, drops: np.ndarray):
    t = state.slot

    def expired(tid: int) -> bool:
        return t - state.tasks[tid].born_slot >= deadline

    def drop(tid: int):
        task = state.tasks[tid]
        task.drop(t, DropReason.DEADLINE)
        drops[task.owner_md] += 1

    # MD and local queues are filled in arrival order.
    for queue in (*state.md_queues, *state.local_queues):
        while queue and expired(queue[0]):
            drop(queue.popleft())
    for row in state.es_queues:
        for idx, queue in enumerate(row):
            if any(expired(tid) for tid in queue):
                keep = []
                for tid in queue:
                    if expired(tid):
                        drop(tid)
                    else:
                        keep.append(tid)
                row[idx] = type(queue)(keep)
    for batch in state.in_transit:
        if any(expired(tid) for tid in batch.task_ids):
            for tid in batch.task_ids:
                if expired(tid):
                    drop(tid)
            batch.task_ids = tuple(
                tid for tid in batch.task_ids
                if state.tasks[tid].status is TaskStatus.IN_TRANSIT
            )
    state.in_transit = [batch for batch in state.in_transit if batch.task_ids]


def step(
    state: SystemState,
    action: Action,
    cfg: ValidatedConfig,
    rng: RandomStreams,
    *,
    inplace: bool = False,
) -> Tuple[SystemState, SlotRecord]:
    """Advance one slot. The input state is left untouched unless `inplace`."""
    validate_action(action, state, cfg)
    s = state if inplace else state.copy()
    sc = cfg.scenario
    U, J = cfg.num_mds, cfg.num_ess
    t = s.slot
    tau = sc.slot_duration

    s.channel_idx = evolve_channels(s, cfg, rng)

    r = transmission_rate(s, action, cfg)
    c = computing_rate(s, action, cfg)

    served = np.zeros((U, J), dtype=np.int64)
    latencies: List[int] = []
    for i, j in zip(*np.nonzero(c)):
        queue = s.es_queues[i][j]
        count = min(len(queue), int(c[i, j]))
        for _ in range(count):
            task = s.tasks[queue.popleft()]
            task.complete(t)
            latencies.append(t - task.born_slot)
        served[i, j] = count

    uplinked = np.zeros(U, dtype=np.int64)
    drops_overflow = np.zeros(U, dtype=np.int64)
    energy_tx = np.where(action.power > 0, action.power * tau, 0.0)
    es_cap = sc.es_queue_capacity
    for i in range(U):
        if action.power[i] <= 0:
            continue
        md_queue = s.md_queues[i]
        j = int(action.assoc[i])
        count = min(len(md_queue), int(r[i]))
        moved = [md_queue.popleft() for _ in range(count)]
        es_queue = s.es_queues[i][j]
        for tid in moved:
            task = s.tasks[tid]
            if es_cap is not None and len(es_queue) >= es_cap:
                task.drop(t, DropReason.OVERFLOW)
                drops_overflow[i] += 1
            else:
                task.move(TaskStatus.ES_QUEUE, es=j)
                es_queue.append(tid)
        uplinked[i] = count
        _charge(s, moved, md_queue, float(energy_tx[i]))

    migrated = dispatch_migrations(s, action.migrate, cfg)
    _, lost = advance_in_transit(s, es_cap)
    for tid in lost:
        drops_overflow[s.tasks[tid].owner_md] += 1

    local_served = np.zeros(U, dtype=np.int64)
    energy_local = np.zeros(U)
    if sc.local_compute is not None:
        rate = local_rate(cfg)
        f_loc = sc.local_compute.local_core_speed_hz
        active_power = sc.local_compute.local_energy_coeff * f_loc**3
        for i, queue in enumerate(s.local_queues):
            if not queue:
                continue
            energy_local[i] = active_power * tau
            done = [queue.popleft() for _ in range(min(len(queue), rate))]
            for tid in done:
                task = s.tasks[tid]
                task.complete(t)
                latencies.append(t - task.born_slot)
            local_served[i] = len(done)
            _charge(s, done, queue, float(energy_local[i]))

    arrivals = draw_arrivals(cfg, t, rng)
    admitted = np.zeros(U, dtype=np.int64)
    md_cap = sc.md_queue_capacity
    minted = []
    for i in range(U):
        ids = []
        for k in range(int(arrivals.a[i])):
            if k < action.local_admit[i]:
                task = s.new_task(i, TaskStatus.LOCAL_QUEUE)
                s.local_queues[i].append(task.task_id)
                admitted[i] += 1
            elif md_cap is not None and len(s.md_queues[i]) >= md_cap:
                task = s.new_task(i, TaskStatus.MD_QUEUE)
                task.drop(t, DropReason.OVERFLOW)
                drops_overflow[i] += 1
            else:
                task = s.new_task(i, TaskStatus.MD_QUEUE)
                s.md_queues[i].append(task.task_id)
                admitted[i] += 1
            ids.append(task.task_id)
        minted.append(tuple(ids))

    drops_deadline = np.zeros(U, dtype=np.int64)
    if sc.deadline_slots > 0:
        _expire(s, sc.deadline_slots, drops_deadline)

    s.completions_total += len(latencies)
    s.drops_total += int(drops_overflow.sum() + drops_deadline.sum())

    record = SlotRecord(
        slot=t,
        arrivals=arrivals.a,
        admitted=admitted,
        uplinked=uplinked,
        served=served,
        local_served=local_served,
        migrated=migrated,
        drops_deadline=drops_deadline,
        drops_overflow=drops_overflow,
        energy_tx=energy_tx,
        energy_local=energy_local,
        latencies=tuple(latencies),
        q_md=s.q_md,
        k_es=s.k_es,
        q_local=s.q_local,
        in_transit=s.in_transit_count,
        channel_idx=s.channel_idx.copy(),
        power=action.power,
        assoc=action.assoc,
        cores=action.cores,
        rates=RateRealization(
            r=r, c=c, actual_uplink=uplinked, actual_served=served
        ),
    )
    s.slot = t + 1
    return s, record


def check_conservation(state: SystemState):
    accounted = state.completions_total + state.drops_total + state.residual()
    if accounted != state.arrivals_total:
        raise ConservationError(state.slot, state.arrivals_total, accounted)


def run_trajectory(
    cfg: ValidatedConfig,
    policy: Policy,
    *,
    horizon: Optional[int] = None,
    lambda_multiplier: float = 1.0,
    keep_trace: bool = False,
    check_invariants: bool = False,
) -> Tuple[RunSummary, Optional[List[SlotRecord]]]:
    from .metrics import SummaryBuilder

    sc = cfg.scenario
    T = sc.horizon if horizon is None else horizon
    rng = RandomStreams(sc.rng_seed)
    state = SystemState.initial(cfg)
    builder = SummaryBuilder(
        cfg,
        policy=getattr(policy, "name", "custom"),
        V=getattr(policy, "V", None),
        lambda_multiplier=lambda_multiplier,
    )
    trace: Optional[List[SlotRecord]] = [] if keep_trace else None
    logging.info(
        "run %s: policy=%s seed=%d slots=%d",
        sc.scenario_id, builder.policy, sc.rng_seed, T,
    )

    for t in range(T):
        action = policy(state)
        if sc.backhaul_links:
            action = action.with_migrations(plan_migrations(state, cfg))
        try:
            state, record = step(state, action, cfg, rng, inplace=True)
        except ActionInvalid as exc:
            raise ActionInvalid(exc.message, slot=t) from exc
        if check_invariants:
            check_conservation(state)
        builder.add(record)
        if trace is not None:
            trace.append(record)
        if (t + 1) % PRUNE_EVERY == 0:
            state.prune_finished()

    summary = builder.finish(state)
    logging.info(
        "run %s finished: completions=%d drops=%d throughput=%.4f",
        sc.scenario_id,
        summary.completions,
        summary.drops_deadline + summary.drops_overflow,
        summary.throughput,
    )
    return summary, trace
