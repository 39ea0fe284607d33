"""Run summaries and cross-run comparison tables.

Latency is counted from the slot a task arrives at its MD to the slot its
computation finishes; returning the result to the MD is taken as free.
Occupancy averages are sampled at the end of every slot.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import IncompatibleRuns
from .scenario import ValidatedConfig
from .schemas import ComparisonRow, RunSummary
from .state import TaskEntry, TaskStatus

if TYPE_CHECKING:
    from .dynamics import SlotRecord


class SummaryBuilder:
    """Streams slot records into the running sums a RunSummary needs."""

    def __init__(
        self,
        cfg: ValidatedConfig,
        policy: str = "custom",
        V: Optional[float] = None,
        lambda_multiplier: float = 1.0,
    ):
        U, J = cfg.num_mds, cfg.num_ess
        self.cfg = cfg
        self.policy = policy
        self.V = V
        self.lambda_multiplier = lambda_multiplier
        self.slots = 0
        self.arrivals = 0
        self.admitted = 0
        self.drops_deadline = 0
        self.drops_overflow = 0
        self.energy_tx = np.zeros(U)
        self.energy_local = np.zeros(U)
        self.sum_q_md = np.zeros(U)
        self.sum_k_es = np.zeros((U, J))
        self.latencies: List[int] = []

    def add(self, record: "SlotRecord"):
        self.slots += 1
        self.arrivals += int(record.arrivals.sum())
        self.admitted += int(record.admitted.sum())
        self.drops_deadline += int(record.drops_deadline.sum())
        self.drops_overflow += int(record.drops_overflow.sum())
        self.energy_tx += record.energy_tx
        self.energy_local += record.energy_local
        self.sum_q_md += record.q_md
        self.sum_k_es += record.k_es
        self.latencies.extend(record.latencies)

    def finish(self, state=None, residual: Optional[int] = None) -> RunSummary:
        cfg = self.cfg
        sc = cfg.scenario
        completions = len(self.latencies)
        drops = self.drops_deadline + self.drops_overflow
        if residual is None:
            residual = (
                state.residual() if state is not None
                else self.arrivals - completions - drops
            )

        slots = max(self.slots, 1)
        mean_q_md = self.sum_q_md / slots
        mean_k_es = self.sum_k_es / slots
        es_backlog = mean_k_es.sum(axis=0)
        energy_per_md = self.energy_tx + self.energy_local
        energy_total = float(energy_per_md.sum())

        if completions:
            lat = np.asarray(self.latencies, dtype=float)
            mean_latency = float(lat.mean())
            p95_latency = float(np.percentile(lat, 95))
            per_completion = energy_total / completions
        else:
            mean_latency = p95_latency = None
            per_completion = math.inf

        return RunSummary(
            scenario_id=sc.scenario_id,
            policy=self.policy,
            V=self.V,
            lambda_multiplier=self.lambda_multiplier,
            seed=sc.rng_seed,
            slots=self.slots,
            arrivals=self.arrivals,
            completions=completions,
            drops_deadline=self.drops_deadline,
            drops_overflow=self.drops_overflow,
            residual=int(residual),
            throughput=completions / self.slots if self.slots else 0.0,
            admitted_throughput=self.admitted / self.slots if self.slots else 0.0,
            # Vacuously every task was served when none arrived.
            completion_ratio=completions / self.arrivals if self.arrivals else 1.0,
            deadline_miss_ratio=(
                self.drops_deadline / self.arrivals if self.arrivals else 0.0
            ),
            mean_latency_slots=mean_latency,
            p95_latency_slots=p95_latency,
            energy_J_total=energy_total,
            energy_J_tx=float(self.energy_tx.sum()),
            energy_J_local=float(self.energy_local.sum()),
            energy_J_per_completion=per_completion,
            energy_J_per_md=energy_per_md.tolist(),
            mean_Q=float(mean_q_md.mean()),
            mean_K=float(mean_k_es.sum() / cfg.num_mds),
            mean_q_md=mean_q_md.tolist(),
            mean_k_es=mean_k_es.tolist(),
            load_imbalance=coefficient_of_variation(es_backlog),
            structure_hash=cfg.structure_hash,
        )


def coefficient_of_variation(values: np.ndarray) -> float:
    mean = float(np.mean(values))
    if mean == 0:
        return 0.0
    return float(np.std(values) / mean)


def summarize(
    records: Iterable["SlotRecord"],
    tasks: Mapping[int, TaskEntry],
    cfg: ValidatedConfig,
    policy: str = "custom",
    V: Optional[float] = None,
    lambda_multiplier: float = 1.0,
) -> RunSummary:
    builder = SummaryBuilder(cfg, policy=policy, V=V, lambda_multiplier=lambda_multiplier)
    for record in records:
        builder.add(record)
    ordered = sorted(tasks.values(), key=lambda task: task.task_id)
    builder.latencies = [
        task.latency for task in ordered if task.status is TaskStatus.COMPLETED
    ]
    residual = sum(
        task.status not in (TaskStatus.COMPLETED, TaskStatus.DROPPED)
        for task in ordered
    )
    return builder.finish(residual=residual)


def mean_half_width(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and 95% Student-t confidence half-width."""
    data = np.asarray(values, dtype=float)
    mean = float(data.mean())
    if data.size < 2:
        return mean, 0.0
    if not np.isfinite(data).all():
        return mean, math.inf
    spread = float(data.std(ddof=1))
    t_crit = float(stats.t.ppf(0.975, data.size - 1))
    return mean, t_crit * spread / math.sqrt(data.size)


def compare_runs(summaries: Sequence[RunSummary]) -> List[ComparisonRow]:
    if not summaries:
        return []
    hashes = {summary.structure_hash for summary in summaries}
    if len(hashes) > 1:
        raise IncompatibleRuns(
            f"runs come from {len(hashes)} different scenario structures"
        )

    order: Dict[str, int] = {}
    groups: Dict[tuple, List[RunSummary]] = {}
    for summary in summaries:
        order.setdefault(summary.policy, len(order))
        key = (summary.policy, summary.V, summary.lambda_multiplier)
        groups.setdefault(key, []).append(summary)

    rows = []
    for key in sorted(groups, key=lambda k: (order[k[0]], k[1] or 0.0, k[2])):
        runs = groups[key]
        throughput = mean_half_width([r.throughput for r in runs])
        ratio = mean_half_width([r.completion_ratio for r in runs])
        latencies = [r.mean_latency_slots for r in runs if r.mean_latency_slots is not None]
        latency = mean_half_width(latencies) if latencies else (None, None)
        energy = mean_half_width([r.energy_J_per_completion for r in runs])
        rows.append(
            ComparisonRow(
                policy=key[0],
                V=key[1],
                lambda_multiplier=key[2],
                runs=len(runs),
                throughput_mean=throughput[0],
                throughput_hw=throughput[1],
                completion_ratio_mean=ratio[0],
                completion_ratio_hw=ratio[1],
                mean_latency_mean=latency[0],
                mean_latency_hw=latency[1],
                energy_per_completion_mean=energy[0],
                energy_per_completion_hw=energy[1],
            )
        )
    return rows
