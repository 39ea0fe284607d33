import numpy as np
import pytest
from scipy import stats

from app import dynamics
from app.dynamics import (
    ArrivalRealization,
    check_conservation,
    computing_rate,
    draw_arrivals,
    evolve_channels,
    run_trajectory,
    step,
    transmission_rate,
)
from app.errors import ActionInvalid
from app.experiments import write_summary_csv, write_trace_csv
from app.policies import build_policy
from app.randomness import RandomStreams
from app.schemas import PolicyId
from app.state import Action, DropReason, Migration, SystemState, TaskStatus


def _action(cfg, power=None, assoc=None, cores=None, local_admit=None):
    action = Action.idle(cfg)
    return Action(
        power=action.power if power is None else np.asarray(power, dtype=float),
        assoc=action.assoc if assoc is None else np.asarray(assoc, dtype=np.int64),
        cores=action.cores if cores is None else np.asarray(cores, dtype=np.int64),
        local_admit=(
            action.local_admit if local_admit is None
            else np.asarray(local_admit, dtype=float)
        ),
    )


def test_arrivals_zero_and_certain(make_config):
    rng = RandomStreams(0)
    zero = make_config(arrival_rates=0.0)
    sure = make_config(arrival_rates=1.0)
    for slot in range(200):
        assert draw_arrivals(zero, slot, rng).a.tolist() == [0]
        assert draw_arrivals(sure, slot, rng).a.tolist() == [1]


def test_bernoulli_arrival_mean(make_config):
    cfg = make_config(
        num_mds=10, md_positions={"kind": "uniform"}, arrival_rates=0.4
    )
    rng = RandomStreams(3)
    total = sum(int(draw_arrivals(cfg, slot, rng).a.sum()) for slot in range(10_000))
    assert total / 100_000 == pytest.approx(0.4, abs=0.01)


def test_identity_channels_never_move(make_config):
    cfg = make_config(channel_states=[0.5, 1.5], channel_transition=[[1.0, 0.0], [0.0, 1.0]])
    state = SystemState.initial(cfg)
    state.channel_idx = np.array([[1]])
    rng = RandomStreams(0)
    for _ in range(100):
        state.channel_idx = evolve_channels(state, cfg, rng)
        state.slot += 1
        assert state.channel_idx.tolist() == [[1]]


def test_flip_channels_alternate(make_config):
    cfg = make_config(channel_states=[0.5, 1.5], channel_transition=[[0.0, 1.0], [1.0, 0.0]])
    state = SystemState.initial(cfg)
    rng = RandomStreams(0)
    seen = []
    for _ in range(10):
        state.channel_idx = evolve_channels(state, cfg, rng)
        state.slot += 1
        seen.append(int(state.channel_idx[0, 0]))
    assert seen == [1, 0] * 5


def test_channel_stationary_occupancy(make_config):
    cfg = make_config(
        num_mds=10,
        md_positions={"kind": "uniform"},
        channel_states=[0.5, 1.5],
        channel_transition=[[0.9, 0.1], [0.5, 0.5]],
    )
    state = SystemState.initial(cfg)
    rng = RandomStreams(11)
    in_zero = 0
    for _ in range(10_000):
        state.channel_idx = evolve_channels(state, cfg, rng)
        state.slot += 1
        in_zero += int((state.channel_idx == 0).sum())
    assert in_zero / 100_000 == pytest.approx(5 / 6, abs=0.01)


def test_transmission_rate_shannon(make_config):
    cfg = make_config()
    state = SystemState.initial(cfg)
    assert transmission_rate(state, _action(cfg), cfg).tolist() == [0]
    sending = _action(cfg, power=[0.1], assoc=[0])
    assert transmission_rate(state, sending, cfg).tolist() == [2]


def test_bandwidth_sharing_asymptotics(make_config):
    # Two MDs on the same ES: the share halves, and so does the noise power.
    def rates(gain_distance, task_bits):
        cfg = make_config(
            num_mds=2,
            md_positions=[[50.0, 50.0 + gain_distance]] * 2,
            task_size_bits=task_bits,
        )
        state = SystemState.initial(cfg)
        solo = _action(cfg, power=[0.1, 0.0], assoc=[0, -1])
        pair = _action(cfg, power=[0.1, 0.1], assoc=[0, 0])
        return (
            int(transmission_rate(state, solo, cfg)[0]),
            int(transmission_rate(state, pair, cfg)[0]),
        )

    # Low SNR: rate barely changes.
    solo, shared = rates(50.0, 100.0)
    assert shared == pytest.approx(solo, rel=0.05)
    # High SNR: rate roughly halves.
    solo, shared = rates(1.0, 1000.0)
    assert shared / solo == pytest.approx(0.5, abs=0.06)


def test_computing_rate(make_config):
    cfg = make_config()
    state = SystemState.initial(cfg)
    assert computing_rate(state, _action(cfg), cfg).tolist() == [[0]]
    assert computing_rate(state, _action(cfg, cores=[[1]]), cfg).tolist() == [[4]]
    two = make_config(cores_per_es=2)
    assert computing_rate(state, _action(two, cores=[[2]]), two).tolist() == [[8]]


def test_step_tandem_recursion(make_config, make_state):
    cfg = make_config(arrival_rates=1.0)
    state = make_state(cfg, q=[5])
    new, record = step(state, _action(cfg, power=[0.1], assoc=[0]), cfg, RandomStreams(0))
    assert new.q_md.tolist() == [4]
    assert new.k_es.tolist() == [[2]]
    assert record.uplinked.tolist() == [2]
    assert record.arrivals.tolist() == [1]
    # the input state is untouched
    assert state.q_md.tolist() == [5]
    assert new.slot == 1


def test_step_uplinks_only_what_is_queued(make_config, make_state):
    cfg = make_config(arrival_rates=1.0)
    state = make_state(cfg, q=[1])
    new, record = step(state, _action(cfg, power=[0.1], assoc=[0]), cfg, RandomStreams(0))
    assert record.uplinked.tolist() == [1]
    assert new.k_es.tolist() == [[1]]
    assert new.q_md.tolist() == [1]


def test_step_serves_only_present_tasks(make_config, make_state):
    cfg = make_config(arrival_rates=0.0)
    state = make_state(cfg, k=[[2]])
    new, record = step(state, _action(cfg, cores=[[1]]), cfg, RandomStreams(0))
    assert record.served.tolist() == [[2]]
    assert record.completions == 2
    assert new.k_es.tolist() == [[0]]
    assert new.completions_total == 2


def test_fifo_completion_order(make_config, make_state):
    cfg = make_config(arrival_rates=0.0, task_cycles=100000000.0)
    state = make_state(cfg, k=[[3]])
    first = list(state.es_queues[0][0])
    for _ in range(3):
        state, _ = step(state, _action(cfg, cores=[[1]]), cfg, RandomStreams(0))
    order = sorted(
        (t for t in state.tasks.values() if t.status is TaskStatus.COMPLETED),
        key=lambda t: t.end_slot,
    )
    assert [t.task_id for t in order] == first


def test_minimum_offload_latency_is_two(make_config, make_state):
    cfg = make_config(arrival_rates=1.0)
    state = SystemState.initial(cfg)
    action = _action(cfg, power=[0.1], assoc=[0], cores=[[1]])
    rng = RandomStreams(0)
    latencies = []
    for _ in range(5):
        state, record = step(state, action, cfg, rng)
        latencies.extend(record.latencies)
    assert latencies and min(latencies) == 2


def test_invalid_actions(make_config, make_state):
    cfg = make_config()
    state = make_state(cfg, q=[1])
    rng = RandomStreams(0)
    with pytest.raises(ActionInvalid):
        step(state, _action(cfg, power=[0.05], assoc=[0]), cfg, rng)
    with pytest.raises(ActionInvalid):
        step(state, _action(cfg, power=[0.1], assoc=[-1]), cfg, rng)
    with pytest.raises(ActionInvalid):
        step(state, _action(cfg, cores=[[2]]), cfg, rng)
    with pytest.raises(ActionInvalid):
        step(state, _action(cfg, local_admit=[1.0]), cfg, rng)
    with pytest.raises(ActionInvalid):
        bogus = _action(cfg).with_migrations([Migration(0, 0, 1, 0, 1)])
        step(state, bogus, cfg, rng)


def test_deadline_drops_at_age_limit(make_config, make_state):
    cfg = make_config(arrival_rates=0.0, deadline_slots=3)
    state = make_state(cfg, q=[2])
    rng = RandomStreams(0)
    for t in range(4):
        state, record = step(state, _action(cfg), cfg, rng)
        if t < 3:
            assert record.drops_deadline.tolist() == [0]
    assert record.drops_deadline.tolist() == [2]
    dropped = [t for t in state.tasks.values() if t.status is TaskStatus.DROPPED]
    assert all(t.reason is DropReason.DEADLINE for t in dropped)
    check_conservation(state)


def test_completed_latency_never_exceeds_deadline(make_config):
    cfg = make_config(arrival_rates=3.0, arrival_kind="poisson", deadline_slots=4, horizon=400)
    summary, trace = run_trajectory(
        cfg, build_policy(cfg, PolicyId.TRANSMISSION), keep_trace=True, check_invariants=True
    )
    assert summary.drops_deadline > 0
    assert max(lat for r in trace for lat in r.latencies) <= 4


def test_overflow_drops_at_capacity(make_config, make_state):
    cfg = make_config(arrival_rates=1.0, md_queue_capacity=2)
    state = make_state(cfg, q=[2])
    new, record = step(state, _action(cfg), cfg, RandomStreams(0))
    assert record.drops_overflow.tolist() == [1]
    assert record.admitted.tolist() == [0]
    assert new.q_md.tolist() == [2]

    capped = make_config(arrival_rates=0.0, es_queue_capacity=1)
    state = make_state(capped, q=[2])
    new, record = step(state, _action(capped, power=[0.1], assoc=[0]), capped, RandomStreams(0))
    assert record.uplinked.tolist() == [2]
    assert record.drops_overflow.tolist() == [1]
    assert new.k_es.tolist() == [[1]]


def test_local_queue_and_energy(make_config, make_state, monkeypatch):
    cfg = make_config(
        local_compute={"local_core_speed_hz": 250000000.0, "local_energy_coeff": 1e-27}
    )
    monkeypatch.setattr(
        dynamics, "draw_arrivals", lambda cfg, slot, rng: ArrivalRealization(a=np.array([2]))
    )
    state = make_state(cfg, q_local=[1])
    new, record = step(state, _action(cfg, local_admit=[1.0]), cfg, RandomStreams(0))
    # one local task served (rate 1), one new local admission, one to the MD queue
    assert record.local_served.tolist() == [1]
    assert new.q_local.tolist() == [1]
    assert new.q_md.tolist() == [1]
    assert record.energy_local[0] == pytest.approx(1e-27 * 250000000.0**3 * 0.1)


def test_transmit_energy(make_config, make_state):
    cfg = make_config(arrival_rates=0.0)
    state = make_state(cfg, q=[1])
    _, record = step(state, _action(cfg, power=[0.1], assoc=[0]), cfg, RandomStreams(0))
    assert record.energy_tx.tolist() == [pytest.approx(0.01)]


def test_zero_rate_run(make_config):
    cfg = make_config(arrival_rates=0.0, horizon=30)
    summary, _ = run_trajectory(cfg, build_policy(cfg))
    assert summary.throughput == 0
    assert summary.energy_J_total == 0
    assert summary.drops_deadline == summary.drops_overflow == 0
    assert summary.completion_ratio == 1.0


def test_empty_horizon(make_config):
    cfg = make_config()
    summary, trace = run_trajectory(cfg, build_policy(cfg), horizon=0, keep_trace=True)
    assert summary.slots == 0
    assert summary.arrivals == 0
    assert trace == []


def test_stable_single_link_completes_everything(make_config):
    cfg = make_config(arrival_rates=0.3, horizon=20_000)
    summary, _ = run_trajectory(cfg, build_policy(cfg, PolicyId.TRANSMISSION))
    assert summary.completion_ratio == pytest.approx(1.0, abs=1e-3)
    assert summary.residual <= 4


def test_finished_tasks_leave_the_ledger(make_config, make_state):
    cfg = make_config(arrival_rates=0.9, horizon=3000)
    inner = build_policy(cfg, PolicyId.TRANSMISSION)
    sizes = []

    def watched(state):
        sizes.append(len(state.tasks))
        return inner(state)

    summary, _ = run_trajectory(cfg, watched, check_invariants=True)
    assert summary.arrivals > 2000
    assert max(sizes) <= dynamics.PRUNE_EVERY + 20
    assert summary.completions + summary.residual + summary.drops_deadline == summary.arrivals

    state = make_state(cfg, q=[3])
    first = next(iter(state.tasks.values()))
    first.drop(0, DropReason.DEADLINE)
    state.md_queues[0].popleft()
    assert state.prune_finished() == 1
    assert len(state.tasks) == 2


def test_action_invalid_carries_slot(make_config):
    cfg = make_config()

    def greedy(state):
        return _action(cfg, cores=[[5]])

    with pytest.raises(ActionInvalid) as exc:
        run_trajectory(cfg, greedy)
    assert exc.value.slot == 0


def test_conservation_randomized(scenario_data):
    from app.scenario import validate_config

    rng = np.random.default_rng(2024)
    for case in range(20):
        U = int(rng.integers(1, 6))
        J = int(rng.integers(1, 4))
        links = []
        if J >= 2 and rng.random() < 0.5:
            links = [{"es_a": 0, "es_b": 1, "delay_slots": int(rng.integers(0, 3)),
                      "capacity_tasks_per_slot": int(rng.integers(1, 4))}]
        data = scenario_data(
            num_mds=U,
            num_ess=J,
            es_positions={"kind": "grid"},
            md_positions={"kind": "uniform"},
            arrival_kind="poisson",
            arrival_rates=float(rng.uniform(0.1, 2.5)),
            deadline_slots=int(rng.integers(0, 8)),
            channel_states=[0.5, 1.5],
            channel_transition=[[0.8, 0.2], [0.3, 0.7]],
            cores_per_es=int(rng.integers(0, 3)),
            md_queue_capacity=[None, 5][int(rng.integers(0, 2))],
            es_queue_capacity=[None, 4][int(rng.integers(0, 2))],
            backhaul_links=links,
            horizon=300,
            rng_seed=case,
        )
        cfg = validate_config(data)
        summary, _ = run_trajectory(
            cfg, build_policy(cfg, PolicyId.RANDOM), check_invariants=True
        )
        accounted = (
            summary.completions + summary.drops_deadline + summary.drops_overflow
            + summary.residual
        )
        assert accounted == summary.arrivals


def test_runs_are_reproducible(make_config, tmp_path):
    cfg = make_config(
        num_mds=3,
        num_ess=2,
        es_positions={"kind": "grid"},
        md_positions={"kind": "uniform"},
        channel_states=[0.5, 1.5],
        channel_transition=[[0.8, 0.2], [0.2, 0.8]],
        arrival_kind="poisson",
        arrival_rates=0.8,
        horizon=200,
        rng_seed=9,
    )
    outputs = []
    for run in range(2):
        summary, trace = run_trajectory(cfg, build_policy(cfg, PolicyId.BACKPRESSURE), keep_trace=True)
        write_trace_csv(trace, tmp_path / f"trace{run}.csv")
        write_summary_csv([summary], tmp_path / f"summary{run}.csv")
        outputs.append(summary)
    assert outputs[0] == outputs[1]
    assert (tmp_path / "trace0.csv").read_bytes() == (tmp_path / "trace1.csv").read_bytes()
    assert (tmp_path / "summary0.csv").read_bytes() == (tmp_path / "summary1.csv").read_bytes()


def test_light_load_is_stable_and_obeys_little(make_config):
    cfg = make_config(arrival_rates=0.5, task_cycles=50000000.0, horizon=20_000)
    summary, trace = run_trajectory(
        cfg, build_policy(cfg, PolicyId.TRANSMISSION), keep_trace=True
    )
    occupancy = np.array([r.q_md.sum() + r.k_es.sum() for r in trace], dtype=float)
    quarter = len(occupancy) // 4
    mid = occupancy[quarter: 2 * quarter].mean()
    final = occupancy[3 * quarter:].mean()
    assert final <= 2 * mid
    little = (summary.mean_Q + summary.mean_K) / summary.throughput
    assert summary.mean_latency_slots == pytest.approx(little, rel=0.05)


def test_overload_grows_linearly(make_config):
    cfg = make_config(
        arrival_kind="poisson", arrival_rates=3.0, task_cycles=50000000.0, horizon=5000
    )
    _, trace = run_trajectory(cfg, build_policy(cfg, PolicyId.TRANSMISSION), keep_trace=True)
    q = np.array([r.q_md[0] for r in trace], dtype=float)
    fit = stats.linregress(np.arange(q.size), q)
    assert fit.slope > 0.5
    assert fit.rvalue**2 >= 0.99
