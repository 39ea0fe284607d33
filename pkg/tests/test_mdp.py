import numpy as np
import pytest

from app.dynamics import run_trajectory
from app.errors import MalformedConfig, OracleTooLarge, SpecMismatch, StateSpaceTooLarge
from app.mdp import (
    TransitionModel,
    brute_force_best_policy,
    build_transition_model,
    count_actions,
    enumerate_actions,
    enumerate_states,
    evaluate_policy,
    load_solved_policy,
    policy_average_reward,
    save_solved_policy,
    solve,
    solved_policy_decide,
    tabulate_policy,
    truncated_config,
    value_iteration,
)
from app.policies import (
    build_policy,
    decide_backpressure,
    decide_computation_based,
    decide_transmission_based,
)
from app.scenario import validate_config
from app.schemas import MdpSpec, PolicyId, RewardKind

FADING = {
    "channel_states": [0.5, 1.5],
    "channel_transition": [[0.8, 0.2], [0.2, 0.8]],
}
TWO_SERVERS = {"num_ess": 2, "es_positions": [[50.0, 50.0], [50.0, 70.0]]}


@pytest.fixture
def make_spec(scenario_data):
    def _make(q_max=1, k_max=1, gamma=0.9, reward_kind=RewardKind.COMPLETIONS, **base):
        return MdpSpec(
            base=scenario_data(**base),
            q_max=q_max,
            k_max=k_max,
            gamma=gamma,
            reward_kind=reward_kind,
        )

    return _make


def test_state_counts(make_spec):
    assert enumerate_states(make_spec(q_max=2, k_max=2, **FADING)).count == 18
    assert enumerate_states(make_spec(**TWO_SERVERS)).count == 8

    large = make_spec(
        q_max=4,
        k_max=4,
        num_mds=2,
        md_positions=[[50.0, 60.0], [50.0, 60.0]],
        channel_states=[0.5, 1.0, 1.5],
        channel_transition=[[0.5, 0.25, 0.25]] * 3,
        **TWO_SERVERS,
    )
    assert enumerate_states(large).count == 1_265_625


def test_state_space_too_large(make_spec):
    spec = make_spec(q_max=2, k_max=2, num_mds=40, md_positions={"kind": "uniform"})
    with pytest.raises(StateSpaceTooLarge) as exc:
        enumerate_states(spec)
    assert exc.value.count > exc.value.cap == 2_000_000


def test_state_index_is_mixed_radix(make_spec):
    space = enumerate_states(make_spec(q_max=2, k_max=2, **FADING))
    assert space.index(np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1))) == 0
    seen = {space.index(*space.decode(idx)) for idx in range(space.count)}
    assert seen == set(range(space.count))
    q, k, ch = space.decode(space.count - 1)
    assert (q.tolist(), k.tolist(), ch.tolist()) == ([2], [[2]], [[1]])


def test_action_counts(make_config):
    tiny = make_config()
    assert count_actions(tiny) == 4
    actions = enumerate_actions(tiny)
    assert actions.count == 4
    idle = actions.to_action(0)
    assert idle.assoc.tolist() == [-1] and idle.cores.tolist() == [[0]]

    wide = make_config(
        num_mds=2,
        md_positions={"kind": "uniform"},
        power_levels=[0.0, 0.05, 0.1],
        cores_per_es=2,
        **TWO_SERVERS,
    )
    assert count_actions(wide) == 900
    actions = enumerate_actions(wide)
    assert actions.count == 900
    assert (actions.cores.sum(axis=1) <= 2).all()


def test_action_cap(make_spec):
    spec = make_spec(
        num_mds=3,
        md_positions={"kind": "uniform"},
        power_levels=[0.0, 0.05, 0.1],
        cores_per_es=4,
        **TWO_SERVERS,
    )
    with pytest.raises(StateSpaceTooLarge) as exc:
        build_transition_model(spec)
    assert exc.value.what == "actions"


def test_rows_are_distributions(make_spec):
    model = build_transition_model(make_spec(q_max=2, k_max=2, arrival_rates=0.6, **FADING))
    for kernel in model.P:
        assert np.abs(np.asarray(kernel.sum(axis=1)).ravel() - 1.0).max() <= 1e-12
        assert (kernel.data >= 0).all()


def test_no_randomness_gives_deterministic_kernel(make_spec):
    spec = make_spec(
        q_max=2,
        k_max=2,
        arrival_rates=0.0,
        channel_states=[0.5, 1.5],
        channel_transition=[[1.0, 0.0], [0.0, 1.0]],
    )
    model = build_transition_model(spec)
    for kernel in model.P:
        assert np.diff(kernel.indptr).tolist() == [1] * model.num_states


def test_single_completion_example(make_spec):
    spec = make_spec(q_max=2, k_max=2, arrival_rates=0.5, task_cycles=100000000.0)
    model = build_transition_model(spec)
    space = model.states
    s = space.index([0], [[1]], [[0]])
    a = model.actions.lookup()[((0.0,), (-1,), (1,))]
    assert model.R[a, s] == 1.0
    row = model.P[a].getrow(s).toarray().ravel()
    assert row[space.index([1], [[0]], [[0]])] == pytest.approx(0.5)
    assert row[space.index([0], [[0]], [[0]])] == pytest.approx(0.5)
    assert row.sum() == pytest.approx(1.0)


def test_overflow_is_tracked(make_spec):
    model = build_transition_model(make_spec(q_max=1, k_max=1, arrival_rates=1.0))
    full = model.states.index([1], [[0]], [[0]])
    idle = 0
    # a full MD queue and a certain arrival: one task lost
    assert model.overflow[idle, full] == pytest.approx(1.0)
    assert model.R[idle, full] == 0.0


def test_value_iteration_zero_reward():
    P = np.array([[[0.5, 0.5], [0.0, 1.0]], [[1.0, 0.0], [0.3, 0.7]]])
    solved = value_iteration(TransitionModel.from_dense(P, np.zeros((2, 2))), gamma=0.9)
    assert solved.values.tolist() == [0.0, 0.0]
    assert solved.table.tolist() == [0, 0]


def test_value_iteration_geometric_series():
    model = TransitionModel.from_dense([[[1.0]]], [[1.0]])
    solved = value_iteration(model, gamma=0.9, epsilon=1e-9)
    assert solved.values[0] == pytest.approx(10.0, abs=1e-7)
    assert solved.residual <= 1e-9


def test_oracle_single_state():
    model = TransitionModel.from_dense([[[1.0]], [[1.0]]], [[0.0], [1.0]])
    result = brute_force_best_policy(model, gamma=0.5)
    assert result.values.tolist() == pytest.approx([2.0])
    assert result.table.tolist() == [1]
    assert result.candidates == 2


def test_oracle_deterministic_chain():
    P = [[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]]
    model = TransitionModel.from_dense(P, [[1.0, 2.0, 3.0]])
    result = brute_force_best_policy(model, gamma=0.5)
    assert result.values.tolist() == pytest.approx([3.5, 5.0, 6.0])
    assert evaluate_policy(model, np.zeros(3, dtype=int), 0.5).tolist() == pytest.approx(
        [3.5, 5.0, 6.0]
    )


ORACLE_INSTANCES = [
    dict(gamma=0.9, arrival_rates=0.3, **FADING),
    dict(gamma=0.5, arrival_rates=0.6, **FADING),
    dict(gamma=0.9, arrival_rates=0.8, reward_kind=RewardKind.ADMITTED_THROUGHPUT, **FADING),
    dict(gamma=0.9, arrival_rates=0.5, cores_per_es=[1, 0], **TWO_SERVERS),
    dict(gamma=0.8, arrival_rates=0.7, cores_per_es=2, task_cycles=100000000.0, **FADING),
]


@pytest.mark.parametrize("instance", ORACLE_INSTANCES)
def test_value_iteration_matches_oracle(make_spec, instance):
    spec = make_spec(**instance)
    model = build_transition_model(spec)
    solved = value_iteration(model, epsilon=1e-10)
    oracle = brute_force_best_policy(model, spec.gamma)

    greedy = evaluate_policy(model, solved.table, spec.gamma)
    assert np.abs(greedy - oracle.values).max() <= 1e-6
    assert np.abs(solved.values - oracle.values).max() <= 1e-6


def test_larger_instance_is_bellman_optimal(make_spec):
    # 4 actions over 18 states is beyond the oracle; check optimality directly.
    spec = make_spec(q_max=2, k_max=2, gamma=0.95, arrival_rates=0.6, **FADING)
    model = build_transition_model(spec)
    with pytest.raises(OracleTooLarge):
        brute_force_best_policy(model, spec.gamma)

    solved = value_iteration(model, epsilon=1e-9)
    greedy = evaluate_policy(model, solved.table, spec.gamma)
    improvement = model.q_values(greedy, spec.gamma).max(axis=0) - greedy
    assert improvement.max() <= 1e-7
    assert abs(solved.value_at_empty - greedy[0]) <= 1e-6


def test_residuals_never_increase(make_spec):
    solved, _ = solve(make_spec(q_max=2, k_max=2, gamma=0.95, arrival_rates=0.6, **FADING))
    assert (np.diff(solved.residuals) <= 1e-12).all()
    assert solved.residual <= 1e-6
    assert solved.iterations == len(solved.residuals)


def test_heuristics_never_beat_oracle(make_spec):
    spec = make_spec(arrival_rates=0.5, **FADING)
    cfg = validate_config(spec.base)
    model = build_transition_model(spec)
    oracle = brute_force_best_policy(model, spec.gamma)
    heuristics = [
        lambda s: decide_transmission_based(s, cfg),
        lambda s: decide_computation_based(s, cfg),
        lambda s: decide_backpressure(s, cfg, 0.0),
    ]
    for decide in heuristics:
        values = evaluate_policy(model, tabulate_policy(model, decide), spec.gamma)
        assert (values <= oracle.values + 1e-9).all()


def test_solved_policy_lookup_and_clamp(make_spec, make_config, make_state):
    spec = make_spec(q_max=2, k_max=2, arrival_rates=0.6, **FADING)
    solved, _ = solve(spec)
    cfg = make_config(arrival_rates=0.6, **FADING)

    empty = solved_policy_decide(make_state(cfg), solved, cfg)
    stored = solved.actions.to_action(int(solved.table[0]))
    assert empty.power.tolist() == stored.power.tolist()
    assert empty.cores.tolist() == stored.cores.tolist()

    at_cap = solved_policy_decide(make_state(cfg, q=[2], k=[[1]]), solved, cfg)
    above = solved_policy_decide(make_state(cfg, q=[7], k=[[1]]), solved, cfg)
    assert above.power.tolist() == at_cap.power.tolist()
    assert above.assoc.tolist() == at_cap.assoc.tolist()
    assert above.cores.tolist() == at_cap.cores.tolist()

    # the truncated scenario is the same controlled system
    solved_policy_decide(make_state(cfg), solved, truncated_config(spec))

    other = make_config(arrival_rates=0.4, **FADING)
    with pytest.raises(SpecMismatch):
        solved_policy_decide(make_state(other), solved, other)


def test_save_and_load(tmp_path, make_spec):
    solved, _ = solve(make_spec(q_max=2, k_max=2, arrival_rates=0.6, **FADING))
    path = tmp_path / "policy.npz"
    save_solved_policy(solved, path)

    loaded = load_solved_policy(path, expected_hash=solved.spec_hash)
    assert loaded.table.tolist() == solved.table.tolist()
    assert loaded.config_hash == solved.config_hash
    assert loaded.space == solved.space
    assert loaded.actions.count == solved.actions.count

    with pytest.raises(SpecMismatch):
        load_solved_policy(path, expected_hash="0" * 64)


def test_tampered_table_is_rejected(tmp_path, make_spec):
    solved, _ = solve(make_spec(q_max=2, k_max=2, arrival_rates=0.6, **FADING))
    path = tmp_path / "policy.npz"
    save_solved_policy(solved, path)

    with np.load(path) as data:
        arrays = {name: data[name] for name in data.files}
    arrays["table"] = (arrays["table"] + 1) % solved.actions.count
    tampered = tmp_path / "tampered.npz"
    with open(tampered, "wb") as fh:
        np.savez(fh, **arrays)
    with pytest.raises(SpecMismatch):
        load_solved_policy(tampered)


@pytest.mark.parametrize(
    "overrides,field",
    [
        ({"arrival_kind": "poisson"}, "base.arrival_kind"),
        ({"deadline_slots": 3}, "base.deadline_slots"),
        (
            {"local_compute": {"local_core_speed_hz": 1e8, "local_energy_coeff": 1e-27}},
            "base.local_compute",
        ),
        (
            {"backhaul_links": [{"es_a": 0, "es_b": 1}], **TWO_SERVERS},
            "base.backhaul_links",
        ),
    ],
)
def test_unsupported_scenarios(make_spec, overrides, field):
    with pytest.raises(MalformedConfig) as exc:
        build_transition_model(make_spec(**overrides))
    assert exc.value.field_path == field


def test_mdp_policy_runs_in_simulator(make_config):
    cfg = make_config(policy_id="mdp", policy_params={"q_max": 1, "k_max": 1}, horizon=200)
    summary, _ = run_trajectory(cfg, build_policy(cfg), check_invariants=True)
    assert summary.policy == "mdp"
    assert summary.completions > 0


def test_simulation_matches_model_average(make_spec):
    spec = make_spec(q_max=2, k_max=2, gamma=0.95, arrival_rates=0.8, **FADING)
    solved, model = solve(spec)
    predicted = policy_average_reward(model, solved.table)

    cfg = truncated_config(spec)
    policy = build_policy(cfg, PolicyId.MDP, solved=solved)
    summary, _ = run_trajectory(cfg, policy, horizon=100_000)
    assert summary.throughput == pytest.approx(predicted, rel=0.02)
