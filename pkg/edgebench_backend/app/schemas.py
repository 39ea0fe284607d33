from __future__ import annotations

from datetime import datetime
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

ROW_SUM_TOLERANCE = 1e-12


class StrictModel(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        from_attributes=True,
        ser_json_inf_nan="strings",
    )


class ArrivalKind(str, Enum):
    BERNOULLI = "bernoulli"
    POISSON = "poisson"


class PolicyId(str, Enum):
    TRANSMISSION = "transmission"
    COMPUTATION = "computation"
    BACKPRESSURE = "backpressure"
    RANDOM = "random"
    LOCAL_THRESHOLD = "local_threshold"
    OPPORTUNISTIC = "opportunistic"
    MDP = "mdp"
    SOLVED = "solved"


class RewardKind(str, Enum):
    COMPLETIONS = "completions"
    ADMITTED_THROUGHPUT = "admitted_throughput"


Position = Tuple[float, float]


class Placement(StrictModel):
    kind: Literal["grid", "uniform"]
    seed: Optional[int] = None


class LocalCompute(StrictModel):
    local_core_speed_hz: float
    local_energy_coeff: float

    @field_validator("local_core_speed_hz")
    @classmethod
    def validate_speed(cls, v: float):
        if v <= 0:
            raise ValueError("local_core_speed_hz must be greater than zero")
        return v

    @field_validator("local_energy_coeff")
    @classmethod
    def validate_coeff(cls, v: float):
        if v < 0:
            raise ValueError("local_energy_coeff must not be negative")
        return v


class BackhaulLink(StrictModel):
    es_a: int
    es_b: int
    delay_slots: int = 0
    capacity_tasks_per_slot: int = 1

    @field_validator("delay_slots")
    @classmethod
    def validate_delay(cls, v: int):
        if v < 0:
            raise ValueError("delay_slots must not be negative")
        return v

    @field_validator("capacity_tasks_per_slot")
    @classmethod
    def validate_capacity(cls, v: int):
        if v < 1:
            raise ValueError("capacity_tasks_per_slot must be at least 1")
        return v

    @model_validator(mode="after")
    def validate_endpoints(self):
        if self.es_a == self.es_b:
            raise ValueError("link endpoints must be distinct")
        if self.es_a < 0 or self.es_b < 0:
            raise ValueError("link endpoints must be ES indices")
        return self


def _positive(name: str, v: float):
    if v <= 0:
        raise ValueError(f"{name} must be greater than zero")
    return v


class ScenarioConfig(StrictModel):
    scenario_id: str = "scenario"
    num_mds: int
    num_ess: int
    horizon: int
    slot_duration: float
    area_side: float = 100.0
    es_positions: Union[List[Position], Placement] = Field(
        default_factory=lambda: Placement(kind="grid")
    )
    md_positions: Union[List[Position], Placement] = Field(
        default_factory=lambda: Placement(kind="uniform")
    )
    task_size_bits: float
    task_cycles: float
    deadline_slots: int = 0
    arrival_rates: Union[List[float], float]
    arrival_kind: ArrivalKind = ArrivalKind.BERNOULLI
    power_levels: List[float]
    bandwidth_hz: float
    noise_psd: float
    pathloss_exponent: float = 3.0
    reference_gain: float = 1e-3
    reference_distance: float = 1.0
    channel_states: List[float] = Field(default_factory=lambda: [0.5, 1.5])
    channel_transition: List[List[float]] = Field(
        default_factory=lambda: [[0.8, 0.2], [0.2, 0.8]]
    )
    cores_per_es: Union[List[int], int]
    core_speed_hz: float
    local_compute: Optional[LocalCompute] = None
    backhaul_links: List[BackhaulLink] = Field(default_factory=list)
    migration_threshold: float = 0.0
    md_queue_capacity: Optional[int] = None
    es_queue_capacity: Optional[int] = None
    policy_id: PolicyId = PolicyId.BACKPRESSURE
    policy_params: Dict[str, Union[float, str]] = Field(default_factory=dict)
    rng_seed: int = 0

    @field_validator("num_mds", "num_ess", "horizon")
    @classmethod
    def validate_counts(cls, v: int, info):
        if v < 1:
            raise ValueError(f"{info.field_name} must be at least 1")
        return v

    @field_validator(
        "slot_duration",
        "area_side",
        "task_size_bits",
        "task_cycles",
        "bandwidth_hz",
        "noise_psd",
        "reference_gain",
        "reference_distance",
        "core_speed_hz",
    )
    @classmethod
    def validate_positive(cls, v: float, info):
        return _positive(info.field_name, v)

    @field_validator("pathloss_exponent", "migration_threshold", "deadline_slots")
    @classmethod
    def validate_non_negative(cls, v, info):
        if v < 0:
            raise ValueError(f"{info.field_name} must not be negative")
        return v

    @field_validator("arrival_rates")
    @classmethod
    def validate_rates(cls, v):
        rates = v if isinstance(v, list) else [v]
        for rate in rates:
            if rate < 0:
                raise ValueError("arrival rates must not be negative")
        return v

    @field_validator("power_levels")
    @classmethod
    def validate_power_levels(cls, v: List[float]):
        if not v:
            raise ValueError("power_levels must not be empty")
        if v[0] != 0:
            raise ValueError("the first power level must be 0 (idle)")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("power_levels must be strictly ascending")
        return v

    @field_validator("channel_states")
    @classmethod
    def validate_channel_states(cls, v: List[float]):
        if not v:
            raise ValueError("channel_states must not be empty")
        if any(s < 0 for s in v):
            raise ValueError("fading multipliers must not be negative")
        return v

    @field_validator("channel_transition")
    @classmethod
    def validate_transition(cls, v: List[List[float]]):
        for row in v:
            if any(p < 0 for p in row):
                raise ValueError("transition probabilities must not be negative")
            if abs(sum(row) - 1.0) > ROW_SUM_TOLERANCE:
                raise ValueError("every transition row must sum to 1")
        return v

    @field_validator("cores_per_es")
    @classmethod
    def validate_cores(cls, v):
        cores = v if isinstance(v, list) else [v]
        if any(c < 0 for c in cores):
            raise ValueError("cores_per_es must not be negative")
        return v

    @field_validator("md_queue_capacity", "es_queue_capacity")
    @classmethod
    def validate_capacity(cls, v: Optional[int], info):
        if v is not None and v < 0:
            raise ValueError(f"{info.field_name} must not be negative")
        return v


class MdpSpec(StrictModel):
    base: ScenarioConfig
    q_max: int = 2
    k_max: int = 2
    gamma: float = 0.95
    epsilon: float = 1e-6
    reward_kind: RewardKind = RewardKind.COMPLETIONS
    state_cap: int = 2_000_000
    action_cap: int = 10_000
    max_iterations: int = 1_000_000

    @field_validator("q_max", "k_max")
    @classmethod
    def validate_caps(cls, v: int, info):
        if v < 0:
            raise ValueError(f"{info.field_name} must not be negative")
        return v

    @field_validator("gamma")
    @classmethod
    def validate_gamma(cls, v: float):
        if not 0 < v < 1:
            raise ValueError("gamma must lie strictly between 0 and 1")
        return v

    @field_validator("epsilon")
    @classmethod
    def validate_epsilon(cls, v: float):
        return _positive("epsilon", v)


class PolicySpec(StrictModel):
    id: PolicyId
    params: Dict[str, Union[float, str]] = Field(default_factory=dict)


class SweepSpec(StrictModel):
    scenario: str
    lambda_multipliers: List[float]
    policies: List[PolicySpec]
    seeds: List[int]
    output_dir: str = "results"

    @field_validator("lambda_multipliers")
    @classmethod
    def validate_multipliers(cls, v: List[float]):
        if not v:
            raise ValueError("lambda_multipliers must not be empty")
        if any(m <= 0 for m in v):
            raise ValueError("lambda multipliers must be greater than zero")
        return v

    @field_validator("policies", "seeds")
    @classmethod
    def validate_non_empty(cls, v, info):
        if not v:
            raise ValueError(f"{info.field_name} must not be empty")
        return v


class SweepRequest(StrictModel):
    scenario: ScenarioConfig
    lambda_multipliers: List[float] = Field(default_factory=lambda: [1.0])
    policies: List[PolicySpec]
    seeds: List[int] = Field(default_factory=lambda: [0])

    @field_validator("lambda_multipliers")
    @classmethod
    def validate_multipliers(cls, v: List[float]):
        if not v or any(m <= 0 for m in v):
            raise ValueError("lambda multipliers must be greater than zero")
        return v


class RunRow(StrictModel):
    scenario_id: str
    policy: str
    V: Optional[float] = None
    lambda_multiplier: float = 1.0
    seed: int
    arrivals: int
    completions: int
    drops_deadline: int
    drops_overflow: int
    throughput: float
    completion_ratio: float
    mean_latency_slots: Optional[float] = None
    p95_latency_slots: Optional[float] = None
    energy_J_total: float
    energy_J_per_completion: float
    mean_Q: float
    mean_K: float
    load_imbalance: float


class RunSummary(RunRow):
    slots: int
    residual: int
    admitted_throughput: float
    deadline_miss_ratio: float
    energy_J_tx: float
    energy_J_local: float
    energy_J_per_md: List[float] = Field(default_factory=list)
    mean_q_md: List[float] = Field(default_factory=list)
    mean_k_es: List[List[float]] = Field(default_factory=list)
    structure_hash: str = ""


class Run(RunRow):
    id: int
    created: datetime
    structure_hash: str


class ComparisonRow(StrictModel):
    policy: str
    V: Optional[float] = None
    lambda_multiplier: float
    runs: int
    throughput_mean: float
    throughput_hw: float
    completion_ratio_mean: float
    completion_ratio_hw: float
    mean_latency_mean: Optional[float] = None
    mean_latency_hw: Optional[float] = None
    energy_per_completion_mean: float
    energy_per_completion_hw: float


class SweepResult(StrictModel):
    rows: List[RunSummary]
    errors: List[str] = Field(default_factory=list)
    comparison: List[ComparisonRow]


class SolveResult(StrictModel):
    spec_hash: str
    config_hash: str
    states: int
    actions: int
    iterations: int
    residual: float
    value_at_empty: float


class Solve(SolveResult):
    id: int
    created: datetime


class PresetInfo(StrictModel):
    name: str
    description: str
    kind: Literal["scenario", "sweep"]
