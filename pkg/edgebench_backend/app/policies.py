"""Per-slot decision makers mapping a SystemState to an Action.

Every policy is a pure function of the state, the scenario and its own
parameters; the random baseline draws from its own per-slot stream. Ties
always go to the lowest index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Tuple, Union

import numpy as np

from .dynamics import FLOOR_EPS, link_gains, shannon_tasks
from .errors import LocalComputeDisabled, MalformedConfig
from .randomness import RandomStreams, Stream
from .scenario import ValidatedConfig
from .schemas import PolicyId
from .state import Action, SystemState


@dataclass
class Policy:
    name: str
    decide: Callable[[SystemState], Action]
    V: Optional[float] = None

    def __call__(self, state: SystemState) -> Action:
        return self.decide(state)


def param(params: Mapping[str, Union[float, str]], name: str, default: float) -> float:
    """Numeric policy parameter; the string "inf" is accepted."""
    return float(params.get(name, default))


def _action(cfg, power, assoc, cores, local_admit=None) -> Action:
    return Action(
        power=power,
        assoc=assoc,
        cores=cores,
        local_admit=np.zeros(cfg.num_mds) if local_admit is None else local_admit,
    )


def _blank(cfg: ValidatedConfig):
    return np.zeros(cfg.num_mds), np.full(cfg.num_mds, -1, dtype=np.int64)


def even_core_split(k_es: np.ndarray, cfg: ValidatedConfig) -> np.ndarray:
    """Split each ES's cores evenly over its non-empty queues.

    The remainder goes one core at a time to the largest queues.
    """
    cores = np.zeros_like(k_es, dtype=np.int64)
    for j in range(cfg.num_ess):
        pending = np.flatnonzero(k_es[:, j] > 0)
        if pending.size == 0:
            continue
        total = int(cfg.cores[j])
        cores[pending, j] = total // pending.size
        by_size = pending[np.lexsort((pending, -k_es[pending, j]))]
        cores[by_size[: total % pending.size], j] += 1
    return cores


def greedy_cores(k_es: np.ndarray, cfg: ValidatedConfig) -> np.ndarray:
    """Hand out cores one at a time to the largest remaining backlog."""
    per_core = cfg.core_cycle_budget / cfg.scenario.task_cycles
    cores = np.zeros_like(k_es, dtype=np.int64)
    for j in range(cfg.num_ess):
        remaining = k_es[:, j].astype(np.int64)
        for _ in range(int(cfg.cores[j])):
            i = int(np.argmax(remaining))
            if remaining[i] <= 0:
                break
            cores[i, j] += 1
            served = int(np.floor(cores[i, j] * per_core + FLOOR_EPS))
            remaining[i] = k_es[i, j] - served
    return cores


def decide_transmission_based(state: SystemState, cfg: ValidatedConfig) -> Action:
    power, assoc = _blank(cfg)
    top = cfg.power_levels[-1]
    waiting = np.flatnonzero(state.q_md > 0)
    if top > 0 and waiting.size:
        gains = link_gains(state.channel_idx, cfg)
        assoc[waiting] = np.argmax(gains[waiting], axis=1)
        power[waiting] = top
    return _action(cfg, power, assoc, even_core_split(state.k_es, cfg))


def decide_computation_based(state: SystemState, cfg: ValidatedConfig) -> Action:
    power, assoc = _blank(cfg)
    k_es = state.k_es
    top = cfg.power_levels[-1]
    waiting = np.flatnonzero(state.q_md > 0)
    if top > 0 and waiting.size:
        assoc[waiting] = int(np.argmin(k_es.sum(axis=0)))
        power[waiting] = top
    return _action(cfg, power, assoc, greedy_cores(k_es, cfg))


def select_link(weights: np.ndarray) -> Optional[Tuple[int, int]]:
    """Best (ES, power index) of a (J, P) weight table, None to stay idle."""
    if weights.size == 0:
        return None
    flat = int(np.argmax(weights))
    if weights.flat[flat] <= 0:
        return None
    return divmod(flat, weights.shape[1])


def link_weights(
    differential: np.ndarray, rates: np.ndarray, levels: np.ndarray, V: float, tau: float
) -> np.ndarray:
    """Drift-plus-penalty weights, shape (..., J, P)."""
    return differential[..., None] * rates - V * levels * tau


def decide_backpressure(state: SystemState, cfg: ValidatedConfig, V: float = 0.0) -> Action:
    power, assoc = _blank(cfg)
    k_es = state.k_es
    cores = greedy_cores(k_es, cfg)
    levels = cfg.power_levels[1:]
    if levels.size == 0:
        return _action(cfg, power, assoc, cores)

    sc = cfg.scenario
    U, J = cfg.num_mds, cfg.num_ess
    gains = link_gains(state.channel_idx, cfg)[:, :, None]
    differential = np.maximum(state.q_md[:, None] - k_es, 0)

    solo = shannon_tasks(levels, gains, sc.bandwidth_hz, cfg)
    weights = link_weights(differential, solo, levels, V, sc.slot_duration)
    provisional = np.full(U, -1, dtype=np.int64)
    for i in range(U):
        choice = select_link(weights[i])
        if choice is not None:
            provisional[i] = choice[0]

    # One refinement pass: rates as if each MD joined the provisional sharers.
    chosen = provisional[provisional >= 0]
    counts = np.bincount(chosen, minlength=J)
    others = counts[None, :] - (provisional[:, None] == np.arange(J)[None, :])
    share = sc.bandwidth_hz / (others + 1)
    shared = shannon_tasks(levels, gains, share[:, :, None], cfg)
    weights = link_weights(differential, shared, levels, V, sc.slot_duration)
    for i in range(U):
        choice = select_link(weights[i])
        if choice is not None:
            assoc[i], p_idx = choice
            power[i] = levels[p_idx]
    return _action(cfg, power, assoc, cores)


def decide_local_offload_threshold(
    state: SystemState, cfg: ValidatedConfig, theta: float, V: float = 0.0
) -> Action:
    if not cfg.local_enabled:
        raise LocalComputeDisabled()
    offload = decide_backpressure(state, cfg, V)
    admit = np.maximum(theta - state.q_local, 0.0).astype(float)
    return replace(offload, local_admit=admit)


def decide_random_feasible(
    state: SystemState, cfg: ValidatedConfig, rng: RandomStreams
) -> Action:
    power, assoc = _blank(cfg)
    levels = cfg.power_levels[1:]
    cores = even_core_split(state.k_es, cfg)
    if levels.size == 0:
        return _action(cfg, power, assoc, cores)
    gen = rng.generator(Stream.POLICY, state.slot)
    picks = gen.integers(0, cfg.num_ess * levels.size, size=cfg.num_mds)
    waiting = np.flatnonzero(state.q_md > 0)
    assoc[waiting] = picks[waiting] // levels.size
    power[waiting] = levels[picks[waiting] % levels.size]
    return _action(cfg, power, assoc, cores)


def decide_opportunistic(
    state: SystemState, cfg: ValidatedConfig, min_fading: float
) -> Action:
    """Offload only while the best link is in a good fading state."""
    power, assoc = _blank(cfg)
    top = cfg.power_levels[-1]
    gains = link_gains(state.channel_idx, cfg)
    best = np.argmax(gains, axis=1)
    fading = cfg.channel_states[state.channel_idx[np.arange(cfg.num_mds), best]]
    go = np.flatnonzero((state.q_md > 0) & (fading >= min_fading))
    if top > 0 and go.size:
        assoc[go] = best[go]
        power[go] = top
    return _action(cfg, power, assoc, even_core_split(state.k_es, cfg))


def build_policy(
    cfg: ValidatedConfig,
    policy_id: Optional[PolicyId] = None,
    params: Optional[Mapping[str, Union[float, str]]] = None,
    solved=None,
) -> Policy:
    """Bind a policy id and its parameters to a scenario."""
    pid = PolicyId(policy_id or cfg.scenario.policy_id)
    params = cfg.scenario.policy_params if params is None else params

    if pid is PolicyId.TRANSMISSION:
        return Policy(pid.value, lambda s: decide_transmission_based(s, cfg))
    if pid is PolicyId.COMPUTATION:
        return Policy(pid.value, lambda s: decide_computation_based(s, cfg))
    if pid is PolicyId.BACKPRESSURE:
        V = param(params, "V", 0.0)
        return Policy(pid.value, lambda s: decide_backpressure(s, cfg, V), V=V)
    if pid is PolicyId.LOCAL_THRESHOLD:
        if not cfg.local_enabled:
            raise LocalComputeDisabled()
        V = param(params, "V", 0.0)
        theta = param(params, "theta", 0.0)
        return Policy(
            pid.value,
            lambda s: decide_local_offload_threshold(s, cfg, theta, V),
            V=V,
        )
    if pid is PolicyId.RANDOM:
        rng = RandomStreams(cfg.scenario.rng_seed)
        return Policy(pid.value, lambda s: decide_random_feasible(s, cfg, rng))
    if pid is PolicyId.OPPORTUNISTIC:
        floor = param(params, "min_fading", float(cfg.channel_states.max()))
        return Policy(pid.value, lambda s: decide_opportunistic(s, cfg, floor))

    from . import mdp

    if solved is None:
        if pid is PolicyId.SOLVED:
            if "policy_path" not in params:
                raise MalformedConfig(
                    "policy_params.policy_path", "required by the solved policy"
                )
            solved = mdp.load_solved_policy(str(params["policy_path"]))
        else:
            solved = mdp.solve_scenario(cfg, params)
            logging.info(
                "solved %s in %d iterations", cfg.scenario.scenario_id, solved.iterations
            )
    return Policy(pid.value, lambda s: mdp.solved_policy_decide(s, solved, cfg))
