"""Single runs, arrival-rate sweeps and their CSV artifacts."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

from pydantic import ValidationError

from .dynamics import SlotRecord, run_trajectory
from .errors import EdgebenchError, MalformedConfig
from .policies import build_policy, param
from .scenario import ValidatedConfig, load_scenario
from .schemas import PolicyId, PolicySpec, PresetInfo, RunRow, RunSummary, SweepSpec

CSV_COLUMNS: Tuple[str, ...] = tuple(RunRow.model_fields)
SWEEP_COLUMNS: Tuple[str, ...] = CSV_COLUMNS + ("error",)
TRACE_COLUMNS: Tuple[str, ...] = (
    "slot",
    "md_id",
    "es_id",
    "Q",
    "K",
    "channel_idx",
    "power",
    "assoc",
    "cores",
    "uplinked",
    "served",
    "arrivals",
    "drops_deadline",
    "drops_overflow",
    "energy_J",
)

PRESET_DIR = Path(__file__).resolve().parent / "presets"
PRESETS: Dict[str, PresetInfo] = {
    info.name: info
    for info in (
        PresetInfo(
            name="case-study",
            description="4 grid ESs, 40 uniform MDs on 100x100 m, heuristics over a lambda sweep",
            kind="sweep",
        ),
        PresetInfo(
            name="case-study-small",
            description="2 ESs, 2 MDs within MDP bounds, solved MDP against the heuristics",
            kind="sweep",
        ),
        PresetInfo(
            name="case-study-scenario",
            description="scenario of the case-study sweep",
            kind="scenario",
        ),
        PresetInfo(
            name="case-study-small-scenario",
            description="scenario of the case-study-small sweep",
            kind="scenario",
        ),
    )
}


@dataclass(frozen=True)
class SweepCell:
    policy_index: int
    policy: PolicySpec
    lambda_multiplier: float
    seed: int


@dataclass
class CellResult:
    cell: SweepCell
    summary: Optional[RunSummary] = None
    error: str = ""


def threads_from_env() -> int:
    value = os.getenv("EDGEBENCH_THREADS")
    if not value:
        return os.cpu_count() or 1
    try:
        return max(int(value), 1)
    except ValueError:
        logging.warning("ignoring EDGEBENCH_THREADS=%r, not an integer", value)
        return os.cpu_count() or 1


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise FileNotFoundError(f"no preset named {name!r}")
    return PRESET_DIR / f"{name}.json"


def list_presets() -> List[PresetInfo]:
    return list(PRESETS.values())


def load_sweep(path: Union[str, Path]) -> Tuple[SweepSpec, ValidatedConfig]:
    """Parse a sweep file; its scenario path is relative to the sweep file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedConfig("", f"invalid JSON: {exc}") from exc
    try:
        spec = SweepSpec.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise MalformedConfig(
            ".".join(str(part) for part in first["loc"]), first["msg"]
        ) from exc
    scenario_path = Path(spec.scenario)
    if not scenario_path.is_absolute():
        scenario_path = path.parent / scenario_path
    return spec, load_scenario(scenario_path)


def load_preset(name: str):
    path = preset_path(name)
    if PRESETS[name].kind == "sweep":
        return load_sweep(path)
    return load_scenario(path)


def scaled_config(cfg: ValidatedConfig, lambda_multiplier: float) -> ValidatedConfig:
    if lambda_multiplier == 1.0:
        return cfg
    rates = (cfg.arrival_rates * lambda_multiplier).tolist()
    return cfg.with_scenario(arrival_rates=rates)


def cell_config(base: ValidatedConfig, cell: SweepCell) -> ValidatedConfig:
    cfg = base.with_scenario(
        rng_seed=cell.seed,
        policy_id=cell.policy.id,
        policy_params=dict(cell.policy.params),
    )
    return scaled_config(cfg, cell.lambda_multiplier)


def run_once(
    cfg: ValidatedConfig,
    *,
    lambda_multiplier: float = 1.0,
    horizon: Optional[int] = None,
    keep_trace: bool = False,
    solved=None,
) -> Tuple[RunSummary, Optional[List[SlotRecord]]]:
    """Run the scenario's own policy, arrival rates scaled by the multiplier."""
    cfg = scaled_config(cfg, lambda_multiplier)
    policy = build_policy(cfg, solved=solved)
    return run_trajectory(
        cfg,
        policy,
        horizon=horizon,
        lambda_multiplier=lambda_multiplier,
        keep_trace=keep_trace,
    )


def run_cell(
    base: ValidatedConfig, cell: SweepCell, solved=None, horizon: Optional[int] = None
) -> CellResult:
    try:
        cfg = cell_config(base, cell)
        policy = build_policy(cfg, solved=solved)
        summary, _ = run_trajectory(
            cfg, policy, horizon=horizon, lambda_multiplier=cell.lambda_multiplier
        )
    except (EdgebenchError, OSError) as exc:
        logging.warning(
            "sweep cell %s lambda=%s seed=%d failed: %s",
            cell.policy.id.value, cell.lambda_multiplier, cell.seed, exc,
        )
        return CellResult(cell, error=str(exc))
    logging.info(
        "sweep cell %s lambda=%s seed=%d done",
        cell.policy.id.value, cell.lambda_multiplier, cell.seed,
    )
    return CellResult(cell, summary=summary)


def _run_cell_args(args) -> CellResult:
    return run_cell(*args)


def sweep_cells(
    multipliers: Sequence[float], policies: Sequence[PolicySpec], seeds: Sequence[int]
) -> List[SweepCell]:
    return [
        SweepCell(idx, policy, float(m), int(seed))
        for idx, policy in enumerate(policies)
        for m in sorted(multipliers)
        for seed in sorted(seeds)
    ]


def _presolve(base: ValidatedConfig, cells: Sequence[SweepCell]) -> Dict[int, object]:
    """Solve or load every MDP table the sweep needs, once each.

    Maps cell position to its table, or to the error that kept it from
    being built.
    """
    from . import mdp

    cache: Dict[tuple, object] = {}
    tables: Dict[int, object] = {}
    for idx, cell in enumerate(cells):
        if cell.policy.id not in (PolicyId.MDP, PolicyId.SOLVED):
            continue
        try:
            key = _table_key(base, cell)
            if key not in cache:
                if cell.policy.id is PolicyId.SOLVED:
                    path = cell.policy.params.get("policy_path")
                    if path is None:
                        raise MalformedConfig(
                            "policy_params.policy_path", "required by the solved policy"
                        )
                    cache[key] = mdp.load_solved_policy(str(path))
                else:
                    cache[key] = mdp.solve_scenario(cell_config(base, cell), cell.policy.params)
            tables[idx] = cache[key]
        except (EdgebenchError, OSError) as exc:
            tables[idx] = exc
    return tables


def _table_key(base: ValidatedConfig, cell: SweepCell) -> tuple:
    params = tuple(sorted((k, str(v)) for k, v in cell.policy.params.items()))
    if cell.policy.id is PolicyId.SOLVED:
        return (cell.policy.id, params)
    return (cell.policy.id, params, cell_config(base, cell).model_hash)


def run_sweep(
    base: ValidatedConfig,
    multipliers: Sequence[float],
    policies: Sequence[PolicySpec],
    seeds: Sequence[int],
    *,
    threads: Optional[int] = None,
    horizon: Optional[int] = None,
) -> List[CellResult]:
    """Every (policy, multiplier, seed) cell, in that order.

    Cells share nothing, so they run in a process pool capped by
    EDGEBENCH_THREADS; the result order never depends on completion order.
    """
    cells = sweep_cells(multipliers, policies, seeds)
    tables = _presolve(base, cells)
    jobs = []
    failed: Dict[int, CellResult] = {}
    for idx, cell in enumerate(cells):
        solved = None
        if cell.policy.id in (PolicyId.MDP, PolicyId.SOLVED):
            solved = tables[idx]
            if isinstance(solved, Exception):
                failed[idx] = CellResult(cell, error=str(solved))
                continue
        jobs.append((idx, (base, cell, solved, horizon)))

    workers = min(threads or threads_from_env(), max(len(jobs), 1))
    logging.info("sweep: %d cells on %d worker(s)", len(cells), workers)
    if workers == 1:
        done = [_run_cell_args(args) for _, args in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_cell_args, [args for _, args in jobs]))

    results: List[Optional[CellResult]] = [None] * len(cells)
    for (idx, _), result in zip(jobs, done):
        results[idx] = result
    for idx, result in failed.items():
        results[idx] = result
    return results


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@contextmanager
def _output(target):
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            yield fh


def summary_row(summary: RunRow) -> List[str]:
    data = summary.model_dump()
    return [_format(data[column]) for column in CSV_COLUMNS]


def _failed_row(base: ValidatedConfig, cell: SweepCell) -> List[str]:
    V = cell.policy.params.get("V")
    known = {
        "scenario_id": base.scenario.scenario_id,
        "policy": cell.policy.id.value,
        "V": None if V is None else param(cell.policy.params, "V", 0.0),
        "lambda_multiplier": cell.lambda_multiplier,
        "seed": cell.seed,
    }
    return [_format(known.get(column)) for column in CSV_COLUMNS]


def write_summary_csv(summaries: Sequence[RunRow], target: Union[str, Path, TextIO]) -> None:
    with _output(target) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for summary in summaries:
            writer.writerow(summary_row(summary))


def write_sweep_csv(
    results: Sequence[CellResult], base: ValidatedConfig, path: Union[str, Path]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for result in results:
            if result.summary is not None:
                writer.writerow(summary_row(result.summary) + [""])
            else:
                writer.writerow(_failed_row(base, result.cell) + [result.error])


def trace_rows(trace: Sequence[SlotRecord]) -> Iterable[List]:
    for record in trace:
        U, J = record.k_es.shape
        uplinked_to = record.assoc
        energy = record.energy
        for i in range(U):
            for j in range(J):
                yield [
                    record.slot,
                    i,
                    j,
                    int(record.q_md[i]),
                    int(record.k_es[i, j]),
                    int(record.channel_idx[i, j]),
                    float(record.power[i]),
                    int(uplinked_to[i]),
                    int(record.cores[i, j]),
                    int(record.uplinked[i]),
                    int(record.served[i, j]),
                    int(record.arrivals[i]),
                    int(record.drops_deadline[i]),
                    int(record.drops_overflow[i]),
                    float(energy[i]),
                ]


def write_trace_csv(trace: Sequence[SlotRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace_rows(trace):
            writer.writerow([_format(value) for value in row])


def summaries_of(results: Sequence[CellResult]) -> List[RunSummary]:
    return [result.summary for result in results if result.summary is not None]
