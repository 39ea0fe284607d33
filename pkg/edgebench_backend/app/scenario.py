"""Scenario validation, node placement and the path-loss law."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from pydantic import ValidationError

from .errors import InconsistentDimensions, MalformedConfig
from .randomness import RandomStreams, Stream
from .schemas import ArrivalKind, Placement, ScenarioConfig

# Fields that change between runs of one experiment without changing the system.
RUN_FIELDS = frozenset(
    {"scenario_id", "horizon", "policy_id", "policy_params", "rng_seed"}
)


@dataclass(frozen=True)
class ValidatedConfig:
    scenario: ScenarioConfig
    es_positions: np.ndarray
    md_positions: np.ndarray
    mean_gains: np.ndarray
    arrival_rates: np.ndarray
    cores: np.ndarray
    power_levels: np.ndarray
    channel_states: np.ndarray
    channel_transition: np.ndarray
    core_cycle_budget: float
    model_hash: str
    structure_hash: str

    @property
    def num_mds(self) -> int:
        return self.scenario.num_mds

    @property
    def num_ess(self) -> int:
        return self.scenario.num_ess

    @property
    def local_enabled(self) -> bool:
        return self.scenario.local_compute is not None

    def with_scenario(self, **changes: Any) -> "ValidatedConfig":
        """Revalidate with some scenario fields replaced."""
        data = self.scenario.model_dump()
        data.update(changes)
        return validate_config(data)


def _read_only(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _broadcast(value, count: int, field: str, dtype) -> np.ndarray:
    if isinstance(value, list):
        if len(value) != count:
            raise InconsistentDimensions(field, count, len(value))
        return np.asarray(value, dtype=dtype)
    return np.full(count, value, dtype=dtype)


def _digest(payload: Mapping[str, Any]) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def structure_hash(scenario: ScenarioConfig) -> str:
    """Hash of everything but run fields and arrival rates."""
    exclude = set(RUN_FIELDS) | {"arrival_rates"}
    return _digest(scenario.model_dump(mode="json", exclude=exclude))


def model_hash(
    scenario: ScenarioConfig, es_positions: np.ndarray, md_positions: np.ndarray
) -> str:
    """Hash of the controlled system itself, with placement resolved.

    Queue capacities are left out: a solved MDP carries its own caps and
    stays valid on the truncated and the untruncated scenario alike.
    """
    exclude = set(RUN_FIELDS) | {"md_queue_capacity", "es_queue_capacity"}
    payload = scenario.model_dump(mode="json", exclude=exclude)
    payload["es_positions"] = es_positions.round(9).tolist()
    payload["md_positions"] = md_positions.round(9).tolist()
    return _digest(payload)


def parse_scenario(data: Mapping[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = ".".join(str(part) for part in first["loc"])
        raise MalformedConfig(path, first["msg"]) from exc


def _placement_seed(placement: Placement, scenario: ScenarioConfig) -> int:
    return scenario.rng_seed if placement.seed is None else placement.seed


def _place(directive, count: int, side: float, seed: int, role: int) -> np.ndarray:
    if isinstance(directive, Placement):
        if directive.kind == "grid":
            k = math.ceil(math.sqrt(count))
            cell = side / k
            centroids = [
                ((col + 0.5) * cell, (row + 0.5) * cell)
                for row in range(k)
                for col in range(k)
            ]
            return np.asarray(centroids[:count], dtype=float)
        rng = RandomStreams(seed).generator(Stream.PLACEMENT, role)
        return rng.uniform(0.0, side, size=(count, 2))
    return np.asarray(directive, dtype=float).reshape(count, 2)


def place_nodes(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Resolve ES and MD coordinates, shapes (J, 2) and (U, 2)."""
    side = cfg.area_side
    es_seed = md_seed = cfg.rng_seed
    if isinstance(cfg.es_positions, Placement):
        es_seed = _placement_seed(cfg.es_positions, cfg)
    if isinstance(cfg.md_positions, Placement):
        md_seed = _placement_seed(cfg.md_positions, cfg)
    es = _place(cfg.es_positions, cfg.num_ess, side, es_seed, role=0)
    md = _place(cfg.md_positions, cfg.num_mds, side, md_seed, role=1)
    return es, md


def mean_gain(d, cfg: ScenarioConfig):
    """Log-distance path loss, clamped below the reference distance."""
    d0 = cfg.reference_distance
    ratio = np.maximum(d, d0) / d0
    return cfg.reference_gain * ratio ** (-cfg.pathloss_exponent)


def _check_positions(field: str, positions, count: int, side: float):
    if isinstance(positions, Placement):
        return
    if len(positions) != count:
        raise InconsistentDimensions(field, count, len(positions))
    for idx, (x, y) in enumerate(positions):
        if not (0 <= x <= side and 0 <= y <= side):
            raise MalformedConfig(f"{field}.{idx}", "position outside the area")


def _check_policy_params(cfg: ScenarioConfig):
    for name in ("V", "theta", "min_fading"):
        value = cfg.policy_params.get(name)
        if value is None:
            continue
        try:
            number = float(value)
        except ValueError:
            number = math.nan
        if not number >= 0:
            raise MalformedConfig(
                f"policy_params.{name}", "must be a non-negative number"
            )


def validate_config(cfg: ScenarioConfig | Mapping[str, Any]) -> ValidatedConfig:
    if not isinstance(cfg, ScenarioConfig):
        cfg = parse_scenario(cfg)
    U, J = cfg.num_mds, cfg.num_ess

    rates = _broadcast(cfg.arrival_rates, U, "arrival_rates", float)
    if cfg.arrival_kind == ArrivalKind.BERNOULLI:
        for idx, rate in enumerate(rates):
            if rate > 1:
                raise MalformedConfig(
                    f"arrival_rates.{idx}", "Bernoulli rates must not exceed 1"
                )
    cores = _broadcast(cfg.cores_per_es, J, "cores_per_es", np.int64)

    n_states = len(cfg.channel_states)
    if len(cfg.channel_transition) != n_states:
        raise InconsistentDimensions(
            "channel_transition", n_states, len(cfg.channel_transition)
        )
    for idx, row in enumerate(cfg.channel_transition):
        if len(row) != n_states:
            raise InconsistentDimensions(f"channel_transition.{idx}", n_states, len(row))

    _check_positions("es_positions", cfg.es_positions, J, cfg.area_side)
    _check_positions("md_positions", cfg.md_positions, U, cfg.area_side)

    for idx, link in enumerate(cfg.backhaul_links):
        for end in ("es_a", "es_b"):
            if getattr(link, end) >= J:
                raise MalformedConfig(
                    f"backhaul_links.{idx}.{end}", f"no ES with index {getattr(link, end)}"
                )
    _check_policy_params(cfg)

    es, md = place_nodes(cfg)
    distances = np.linalg.norm(md[:, None, :] - es[None, :, :], axis=-1)
    gains = mean_gain(distances, cfg)

    return ValidatedConfig(
        scenario=cfg,
        es_positions=_read_only(es),
        md_positions=_read_only(md),
        mean_gains=_read_only(np.asarray(gains, dtype=float)),
        arrival_rates=_read_only(rates),
        cores=_read_only(cores),
        power_levels=_read_only(np.asarray(cfg.power_levels, dtype=float)),
        channel_states=_read_only(np.asarray(cfg.channel_states, dtype=float)),
        channel_transition=_read_only(
            np.asarray(cfg.channel_transition, dtype=float)
        ),
        core_cycle_budget=cfg.core_speed_hz * cfg.slot_duration,
        model_hash=model_hash(cfg, es, md),
        structure_hash=structure_hash(cfg),
    )


def load_scenario(path) -> ValidatedConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedConfig("", f"invalid JSON: {exc}") from exc
    return validate_config(data)
