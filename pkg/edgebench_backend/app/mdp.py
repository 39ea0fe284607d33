"""Exact MDP on truncated instances.

States are the tandem queue lengths and the per-link channel indices, with
every MD queue capped at q_max and every computing queue at k_max; tasks
pushed past a cap are dropped, which is exactly what the simulator does
with md_queue_capacity = q_max and es_queue_capacity = k_max. Actions are
joint (power, association, core allocation) choices. The kernel is
enumerated exactly over Bernoulli arrivals and channel transitions.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .dynamics import FLOOR_EPS, shannon_tasks
from .errors import (
    MalformedConfig,
    NonConvergence,
    OracleTooLarge,
    SpecMismatch,
    StateSpaceTooLarge,
)
from .scenario import ValidatedConfig, validate_config
from .schemas import ArrivalKind, MdpSpec, RewardKind
from .state import Action, SystemState

ORACLE_CAP = 10_000_000
TIE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class StateSpace:
    num_mds: int
    num_ess: int
    q_max: int
    k_max: int
    num_channels: int

    @property
    def links(self) -> int:
        return self.num_mds * self.num_ess

    @property
    def shape(self) -> Tuple[int, ...]:
        return (
            (self.q_max + 1,) * self.num_mds
            + (self.k_max + 1,) * self.links
            + (self.num_channels,) * self.links
        )

    @property
    def count(self) -> int:
        return math.prod(self.shape)

    @property
    def strides(self) -> np.ndarray:
        radices = np.asarray(self.shape, dtype=np.int64)
        return np.concatenate([np.cumprod(radices[::-1])[::-1][1:], [1]]).astype(np.int64)

    def index(self, q: np.ndarray, k: np.ndarray, channels: np.ndarray) -> int:
        digits = np.concatenate([np.ravel(q), np.ravel(k), np.ravel(channels)])
        return int(digits @ self.strides)

    def decode(self, idx: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        q, k, ch = self.decode_all(np.asarray([idx]))
        return q[0], k[0], ch[0]

    def decode_all(self, indices: Optional[np.ndarray] = None):
        if indices is None:
            indices = np.arange(self.count)
        digits = np.stack(np.unravel_index(indices, self.shape), axis=1)
        U, L = self.num_mds, self.links
        q = digits[:, :U]
        k = digits[:, U: U + L].reshape(-1, U, self.num_ess)
        ch = digits[:, U + L:].reshape(-1, U, self.num_ess)
        return q, k, ch


@dataclass(frozen=True)
class ActionSpace:
    power: np.ndarray
    assoc: np.ndarray
    cores: np.ndarray

    @property
    def count(self) -> int:
        return self.power.shape[0]

    def to_action(self, idx: int) -> Action:
        return Action(
            power=self.power[idx].copy(),
            assoc=self.assoc[idx].copy(),
            cores=self.cores[idx].copy(),
            local_admit=np.zeros(self.power.shape[1]),
        )

    def lookup(self) -> Dict[tuple, int]:
        return {
            (
                tuple(self.power[a].tolist()),
                tuple(self.assoc[a].tolist()),
                tuple(self.cores[a].ravel().tolist()),
            ): a
            for a in range(self.count)
        }


@dataclass
class TransitionModel:
    P: List[sparse.csr_matrix]
    R: np.ndarray
    overflow: Optional[np.ndarray] = None
    states: Optional[StateSpace] = None
    actions: Optional[ActionSpace] = None
    spec: Optional[MdpSpec] = None
    config_hash: str = ""
    spec_hash: str = ""
    _stacked: Optional[sparse.csr_matrix] = field(default=None, repr=False)

    @classmethod
    def from_dense(cls, P, R) -> "TransitionModel":
        P = np.asarray(P, dtype=float)
        return cls(
            P=[sparse.csr_matrix(P[a]) for a in range(P.shape[0])],
            R=np.asarray(R, dtype=float),
        )

    @property
    def num_states(self) -> int:
        return self.R.shape[1]

    @property
    def num_actions(self) -> int:
        return self.R.shape[0]

    @property
    def stacked(self) -> sparse.csr_matrix:
        """All kernels stacked action-major, shape (A*S, S)."""
        if self._stacked is None:
            self._stacked = sparse.vstack(self.P, format="csr")
        return self._stacked

    def q_values(self, values: np.ndarray, gamma: float) -> np.ndarray:
        future = (self.stacked @ values).reshape(self.num_actions, self.num_states)
        return self.R + gamma * future

    def policy_kernel(self, table: np.ndarray) -> Tuple[sparse.csr_matrix, np.ndarray]:
        S = self.num_states
        rows = np.asarray(table, dtype=np.int64) * S + np.arange(S)
        return self.stacked[rows], self.R[table, np.arange(S)]


@dataclass
class SolvedPolicy:
    table: np.ndarray
    values: np.ndarray
    iterations: int
    residual: float
    residuals: np.ndarray
    spec_hash: str = ""
    config_hash: str = ""
    q_max: int = 0
    k_max: int = 0
    space: Optional[StateSpace] = None
    actions: Optional[ActionSpace] = None

    @property
    def value_at_empty(self) -> float:
        return float(self.values[0])


@dataclass(frozen=True)
class OracleResult:
    values: np.ndarray
    table: np.ndarray
    candidates: int


def _check_supported(cfg: ValidatedConfig):
    sc = cfg.scenario
    if sc.arrival_kind != ArrivalKind.BERNOULLI:
        raise MalformedConfig("base.arrival_kind", "the MDP needs Bernoulli arrivals")
    if sc.local_compute is not None:
        raise MalformedConfig("base.local_compute", "the MDP has no local queues")
    if sc.backhaul_links:
        raise MalformedConfig("base.backhaul_links", "the MDP has no backhaul")
    if sc.deadline_slots:
        raise MalformedConfig("base.deadline_slots", "the MDP has no deadlines")


def spec_hash(spec: MdpSpec, cfg: ValidatedConfig) -> str:
    payload = {
        "config": cfg.model_hash,
        "q_max": spec.q_max,
        "k_max": spec.k_max,
        "gamma": spec.gamma,
        "epsilon": spec.epsilon,
        "reward_kind": spec.reward_kind.value,
    }
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def truncated_config(spec: MdpSpec) -> ValidatedConfig:
    """The scenario whose simulated dynamics the MDP describes exactly."""
    data = spec.base.model_dump()
    data.update(md_queue_capacity=spec.q_max, es_queue_capacity=spec.k_max)
    return validate_config(data)


def enumerate_states(spec: MdpSpec) -> StateSpace:
    base = spec.base
    space = StateSpace(
        num_mds=base.num_mds,
        num_ess=base.num_ess,
        q_max=spec.q_max,
        k_max=spec.k_max,
        num_channels=len(base.channel_states),
    )
    if space.count > spec.state_cap:
        raise StateSpaceTooLarge(space.count, spec.state_cap)
    return space


def count_actions(cfg: ValidatedConfig) -> int:
    U, J = cfg.num_mds, cfg.num_ess
    choices = 1 + J * (len(cfg.power_levels) - 1)
    allocations = math.prod(math.comb(int(m) + U, U) for m in cfg.cores)
    return choices**U * allocations


def enumerate_actions(cfg: ValidatedConfig, cap: int = 10_000) -> ActionSpace:
    """Idle first, then (ES, power) pairs; every allocation with sum <= M_j."""
    count = count_actions(cfg)
    if count > cap:
        raise StateSpaceTooLarge(count, cap, what="actions")
    U, J = cfg.num_mds, cfg.num_ess
    levels = cfg.power_levels[1:]
    per_md = [(-1, 0.0)] + [(j, float(p)) for j in range(J) for p in levels]
    per_es = [
        [alloc for alloc in itertools.product(range(int(m) + 1), repeat=U) if sum(alloc) <= m]
        for m in cfg.cores
    ]

    power, assoc, cores = [], [], []
    for choice in itertools.product(per_md, repeat=U):
        for alloc in itertools.product(*per_es):
            power.append([p for _, p in choice])
            assoc.append([j for j, _ in choice])
            cores.append(np.asarray(alloc, dtype=np.int64).T)
    return ActionSpace(
        power=np.asarray(power, dtype=float).reshape(-1, U),
        assoc=np.asarray(assoc, dtype=np.int64).reshape(-1, U),
        cores=np.asarray(cores, dtype=np.int64).reshape(-1, U, J),
    )


def _uplink_rates(cfg: ValidatedConfig, power, assoc, channels) -> np.ndarray:
    U, J = cfg.num_mds, cfg.num_ess
    r = np.zeros(U, dtype=np.int64)
    active = np.flatnonzero((power > 0) & (assoc >= 0))
    if active.size:
        es = assoc[active]
        sharers = np.bincount(es, minlength=J)
        gain = cfg.mean_gains[active, es] * cfg.channel_states[channels[active, es]]
        share = cfg.scenario.bandwidth_hz / sharers[es]
        r[active] = shannon_tasks(power[active], gain, share, cfg)
    return r


def build_transition_model(spec: MdpSpec) -> TransitionModel:
    cfg = validate_config(spec.base)
    _check_supported(cfg)
    space = enumerate_states(spec)
    actions = enumerate_actions(cfg, spec.action_cap)
    U, J, L = space.num_mds, space.num_ess, space.links
    S = space.count
    q, k, ch = space.decode_all()
    strides = space.strides
    flat_ch = ch.reshape(S, L)
    transition = cfg.channel_transition
    per_core = cfg.core_cycle_budget / cfg.scenario.task_cycles
    rows_all = np.arange(S)

    channel_moves = []
    for nxt in itertools.product(range(space.num_channels), repeat=L):
        nxt = np.asarray(nxt, dtype=np.int64)
        prob = np.prod(transition[flat_ch, nxt[None, :]], axis=1)
        if prob.any():
            channel_moves.append((nxt, prob))
    arrival_moves = []
    for arr in itertools.product((0, 1), repeat=U):
        arr = np.asarray(arr, dtype=np.int64)
        prob = float(np.prod(np.where(arr == 1, cfg.arrival_rates, 1 - cfg.arrival_rates)))
        if prob > 0:
            arrival_moves.append((arr, prob))
    logging.info(
        "building MDP kernel: %d states, %d actions, %d outcomes per pair",
        S, actions.count, len(channel_moves) * len(arrival_moves),
    )

    kernels: List[sparse.csr_matrix] = []
    reward = np.zeros((actions.count, S))
    overflow = np.zeros((actions.count, S))
    for a in range(actions.count):
        power, assoc = actions.power[a], actions.assoc[a]
        capacity = np.floor(actions.cores[a] * per_core + FLOOR_EPS).astype(np.int64)
        served = np.minimum(k, capacity[None])
        k_after = k - served
        admitted = np.zeros(S)
        dropped = np.zeros(S)
        rows, cols, vals = [], [], []
        for nxt, p_ch in channel_moves:
            r = _uplink_rates(cfg, power, assoc, nxt.reshape(U, J))
            up = np.minimum(q, r[None, :])
            k_new = k_after.copy()
            for i in np.flatnonzero(r > 0):
                k_new[:, i, assoc[i]] += up[:, i]
            over_k = np.maximum(k_new - space.k_max, 0).sum(axis=(1, 2))
            k_new = np.minimum(k_new, space.k_max)
            q_mid = q - up
            for arr, p_arr in arrival_moves:
                q_new = q_mid + arr[None, :]
                over_q = np.maximum(q_new - space.q_max, 0).sum(axis=1)
                q_new = np.minimum(q_new, space.q_max)
                prob = p_ch * p_arr
                digits = np.concatenate(
                    [q_new, k_new.reshape(S, L), np.broadcast_to(nxt, (S, L))], axis=1
                )
                keep = prob > 0
                rows.append(rows_all[keep])
                cols.append((digits @ strides)[keep])
                vals.append(prob[keep])
                dropped += prob * (over_k + over_q)
                admitted += prob * (arr.sum() - over_q)
        kernels.append(
            sparse.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(S, S),
            ).tocsr()
        )
        if spec.reward_kind is RewardKind.COMPLETIONS:
            reward[a] = served.sum(axis=(1, 2))
        else:
            reward[a] = admitted
        overflow[a] = dropped

    return TransitionModel(
        P=kernels,
        R=reward,
        overflow=overflow,
        states=space,
        actions=actions,
        spec=spec,
        config_hash=cfg.model_hash,
        spec_hash=spec_hash(spec, cfg),
    )


def greedy_table(model: TransitionModel, values: np.ndarray, gamma: float) -> np.ndarray:
    q_values = model.q_values(values, gamma)
    best = q_values.max(axis=0)
    return np.argmax(q_values >= best - TIE_TOLERANCE, axis=0).astype(np.int64)


def value_iteration(
    model: TransitionModel,
    gamma: Optional[float] = None,
    epsilon: Optional[float] = None,
    max_iterations: Optional[int] = None,
) -> SolvedPolicy:
    """Bellman iteration to a sup-norm residual of at most epsilon.

    The greedy policy of the result is within 2*gamma*epsilon/(1-gamma) of
    optimal.
    """
    spec = model.spec
    gamma = gamma if gamma is not None else (spec.gamma if spec else 0.95)
    epsilon = epsilon if epsilon is not None else (spec.epsilon if spec else 1e-6)
    if max_iterations is None:
        max_iterations = spec.max_iterations if spec else 1_000_000

    values = np.zeros(model.num_states)
    residuals: List[float] = []
    residual = math.inf
    for _ in range(max_iterations):
        updated = model.q_values(values, gamma).max(axis=0)
        residual = float(np.abs(updated - values).max())
        values = updated
        residuals.append(residual)
        if residual <= epsilon:
            break
    else:
        raise NonConvergence(max_iterations, residual)

    logging.info(
        "value iteration converged in %d iterations, residual %.3e",
        len(residuals), residual,
    )
    return SolvedPolicy(
        table=greedy_table(model, values, gamma),
        values=values,
        iterations=len(residuals),
        residual=residual,
        residuals=np.asarray(residuals),
        spec_hash=model.spec_hash,
        config_hash=model.config_hash,
        q_max=model.states.q_max if model.states else 0,
        k_max=model.states.k_max if model.states else 0,
        space=model.states,
        actions=model.actions,
    )


def solve(spec: MdpSpec) -> Tuple[SolvedPolicy, TransitionModel]:
    model = build_transition_model(spec)
    return value_iteration(model), model


def _mdp_param(params: Mapping[str, Union[float, str]], name: str, default, kind):
    value = params.get(name, default)
    try:
        return kind(value)
    except (TypeError, ValueError, OverflowError) as exc:
        raise MalformedConfig(f"policy_params.{name}", f"not a number: {value!r}") from exc


def solve_scenario(
    cfg: ValidatedConfig, params: Mapping[str, Union[float, str]]
) -> SolvedPolicy:
    values = {
        "q_max": _mdp_param(params, "q_max", 2, int),
        "k_max": _mdp_param(params, "k_max", 2, int),
        "gamma": _mdp_param(params, "gamma", 0.95, float),
        "epsilon": _mdp_param(params, "epsilon", 1e-6, float),
    }
    try:
        spec = MdpSpec(base=cfg.scenario, **values)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = ".".join(str(part) for part in first["loc"])
        raise MalformedConfig(f"policy_params.{path}", first["msg"]) from exc
    solved, _ = solve(spec)
    return solved


def evaluate_policy(model: TransitionModel, table: np.ndarray, gamma: float) -> np.ndarray:
    """Exact discounted value of a deterministic stationary policy."""
    kernel, reward = model.policy_kernel(table)
    system = sparse.identity(model.num_states, format="csc") - gamma * kernel.tocsc()
    return np.atleast_1d(spsolve(system, reward))


def policy_average_reward(
    model: TransitionModel, table: np.ndarray, start: int = 0, horizon: int = 20_000
) -> float:
    """Long-run reward per slot from `start`, averaged over the second half."""
    kernel, reward = model.policy_kernel(table)
    forward = kernel.T.tocsr()
    dist = np.zeros(model.num_states)
    dist[start] = 1.0
    total = 0.0
    counted = 0
    for n in range(horizon):
        if n >= horizon // 2:
            total += float(dist @ reward)
            counted += 1
        dist = forward @ dist
    return total / counted


def brute_force_best_policy(
    model: TransitionModel, gamma: float, cap: int = ORACLE_CAP, chunk: int = 4096
) -> OracleResult:
    """Evaluate every stationary deterministic policy exactly."""
    S, A = model.num_states, model.num_actions
    candidates = A**S
    if candidates > cap and not (A <= 4 and S <= 12):
        raise OracleTooLarge(candidates, cap)

    dense = np.stack([P.toarray() for P in model.P])
    eye = np.eye(S)
    place = A ** np.arange(S - 1, -1, -1, dtype=np.int64)
    best_score = -math.inf
    best_values = best_table = None
    for start in range(0, candidates, chunk):
        ids = np.arange(start, min(start + chunk, candidates), dtype=np.int64)
        tables = (ids[:, None] // place[None, :]) % A
        kernels = dense[tables, np.arange(S)[None, :]]
        rewards = model.R[tables, np.arange(S)[None, :]]
        values = np.linalg.solve(eye[None] - gamma * kernels, rewards[..., None])[..., 0]
        scores = values.sum(axis=1)
        top = int(np.argmax(scores))
        if scores[top] > best_score + TIE_TOLERANCE:
            best_score = float(scores[top])
            best_values = values[top]
            best_table = tables[top]
    return OracleResult(values=best_values, table=best_table, candidates=candidates)


def _clamped_index(state: SystemState, space: StateSpace) -> int:
    q = np.minimum(state.q_md, space.q_max)
    k = np.minimum(state.k_es, space.k_max)
    return space.index(q, k, state.channel_idx)


def solved_policy_decide(
    state: SystemState, solved: SolvedPolicy, cfg: Optional[ValidatedConfig] = None
) -> Action:
    if cfg is not None and solved.config_hash != cfg.model_hash:
        raise SpecMismatch(solved.config_hash, cfg.model_hash)
    return solved.actions.to_action(int(solved.table[_clamped_index(state, solved.space)]))


def synthetic_state(space: StateSpace, idx: int) -> SystemState:
    """A SystemState with the queue lengths of MDP state `idx`."""
    q, k, ch = space.decode(idx)
    return SystemState(
        slot=0,
        channel_idx=ch.astype(np.int64),
        md_queues=[deque(range(n)) for n in q],
        es_queues=[[deque(range(n)) for n in row] for row in k],
        local_queues=[deque() for _ in range(space.num_mds)],
    )


def tabulate_policy(
    model: TransitionModel, decide: Callable[[SystemState], Action]
) -> np.ndarray:
    """The action table a state-feedback policy induces on the model."""
    lookup = model.actions.lookup()
    table = np.zeros(model.num_states, dtype=np.int64)
    for s in range(model.num_states):
        action = decide(synthetic_state(model.states, s))
        key = (
            tuple(action.power.tolist()),
            tuple(action.assoc.tolist()),
            tuple(action.cores.ravel().tolist()),
        )
        if key not in lookup:
            raise ValueError(f"state {s}: action is outside the model's action set")
        table[s] = lookup[key]
    return table


def save_solved_policy(solved: SolvedPolicy, path) -> None:
    space = solved.space
    meta = {
        "spec_hash": solved.spec_hash,
        "config_hash": solved.config_hash,
        "iterations": solved.iterations,
        "residual": solved.residual,
        "space": [
            space.num_mds, space.num_ess, space.q_max, space.k_max, space.num_channels
        ],
        "table_digest": _table_digest(solved),
    }
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh,
            table=solved.table,
            values=solved.values,
            residuals=solved.residuals,
            power=solved.actions.power,
            assoc=solved.actions.assoc,
            cores=solved.actions.cores,
            meta=np.asarray(json.dumps(meta)),
        )


def _table_digest(solved: SolvedPolicy) -> str:
    digest = hashlib.sha256(solved.spec_hash.encode())
    digest.update(np.ascontiguousarray(solved.table, dtype=np.int64).tobytes())
    return digest.hexdigest()


def load_solved_policy(path, expected_hash: Optional[str] = None) -> SolvedPolicy:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        U, J, q_max, k_max, n_ch = meta["space"]
        solved = SolvedPolicy(
            table=data["table"],
            values=data["values"],
            iterations=int(meta["iterations"]),
            residual=float(meta["residual"]),
            residuals=data["residuals"],
            spec_hash=meta["spec_hash"],
            config_hash=meta["config_hash"],
            q_max=q_max,
            k_max=k_max,
            space=StateSpace(U, J, q_max, k_max, n_ch),
            actions=ActionSpace(
                power=data["power"], assoc=data["assoc"], cores=data["cores"]
            ),
        )
    if _table_digest(solved) != meta["table_digest"]:
        raise SpecMismatch(meta["table_digest"], _table_digest(solved))
    if expected_hash is not None and solved.spec_hash != expected_hash:
        raise SpecMismatch(solved.spec_hash, expected_hash)
    return solved


def solve_result_fields(solved: SolvedPolicy) -> Dict[str, Union[int, float, str]]:
    return {
        "spec_hash": solved.spec_hash,
        "config_hash": solved.config_hash,
        "states": solved.space.count if solved.space else len(solved.table),
        "actions": solved.actions.count if solved.actions else 0,
        "iterations": solved.iterations,
        "residual": solved.residual,
        "value_at_empty": solved.value_at_empty,
    }

