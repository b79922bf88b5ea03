import numpy as np
import pytest

from opsched.cost import uniform_profile
from opsched.fixtures import random_chain
from opsched.graph import GraphError, ModelGraph, chain_graph, make_node
from opsched.nn import Tensor
from opsched.plan import map_action_to_ratios
from opsched.rl import (EpisodeDone, ReplayBuffer, SacAgent, SacConfig, SchedulingEnv, cpu_only, dp_schedule,
                        greedy_schedule, gpu_only, reward, static_threshold_schedule, train_sac)
from opsched.rl.env import STATE_DIM
from opsched.rl.sac import critic_target, soft_update, squash, squashed_log_prob
from opsched.fixtures import random_dag
from opsched.sim import simulate

from conftest import relu_chain


@pytest.mark.parametrize("args,expect", [
    ((10, 0, 0, 0, 1, 0, 0), -10.0),
    ((10, 3, 4, 5, 0, 0, 0), 0.0),
    ((5, 1.5, 0.5, 1, 1, 0.1, 0.01), -5.21),
])
def test_reward_examples(args, expect):
    assert reward(*args) == pytest.approx(expect)


def test_reward_rejects_negative_weights():
    with pytest.raises(ValueError):
        reward(1, 0, 0, 0, -1, 0, 0)


@pytest.mark.parametrize("a,xi,mode", [(1.0, 0.0, "GPU"), (0.0, 1.0, "CPU"), (0.3, 0.7, "SPLIT"),
                                       (0.97, 0.0, "GPU"), (0.02, 1.0, "CPU")])
def test_map_action(a, xi, mode):
    got_xi, got_mode = map_action_to_ratios(a)
    assert got_mode == mode and got_xi == pytest.approx(xi)


def test_single_operator_episode(agx):
    env = SchedulingEnv(relu_chain(1), agx)
    s = env.reset()
    assert s.shape == (STATE_DIM,)
    _, _, done, _ = env.step(1.0)
    assert done
    with pytest.raises(EpisodeDone):
        env.step(0.0)


def test_gpu_memory_bookkeeping():
    g = relu_chain(2)
    base = uniform_profile()
    from opsched.cost import op_latency
    need = op_latency(g.nodes[0], base.gpu).mem_required
    gpu = base.gpu.__class__(**{**base.gpu.__dict__, "mem_capacity": need * 10})
    env = SchedulingEnv(g, base.with_(gpu=gpu))
    env.reset()
    s, *_ = env.step(1.0)
    assert s[4] == pytest.approx(0.10)


def test_successor_input_is_producer_output(agx):
    a = make_node(0, "Conv2d", (1, 3, 32, 32), (1, 16, 32, 32), 0.2, kernel=(3, 3, 3, 16))
    b = make_node(1, "ReLU", (1, 16, 32, 32), (1, 16, 32, 32))
    env = SchedulingEnv(chain_graph([a, b]), agx)
    s0 = env.reset()
    s1, *_ = env.step(1.0)
    assert s1[2] == pytest.approx(s0[3])
    assert s0[0] == pytest.approx(0.2)


def test_buffer_eviction_and_sampling():
    buf = ReplayBuffer(2, capacity=5, seed=0)
    with pytest.raises(ValueError):
        buf.sample(1)
    for i in range(8):
        buf.add(np.full(2, i), 0.5, -i, np.zeros(2), False)
    assert len(buf) == 5
    assert buf.contents().tolist() == [3, 4, 5, 6, 7]
    s, *_ = buf.sample(200)
    assert set(s[:, 0].astype(int)) == {3, 4, 5, 6, 7}


def test_soft_update_tau_one_copies(rng):
    agent = SacAgent(seed=0)
    for p in agent.q1.parameters():
        p.data = p.data + rng.normal(size=p.data.shape)
    soft_update(agent.q1_target, agent.q1, 1.0)
    for t, s in zip(agent.q1_target.parameters(), agent.q1.parameters()):
        np.testing.assert_array_equal(t.data, s.data)


def test_soft_update_contracts_geometrically(rng):
    agent = SacAgent(seed=0)
    for p in agent.q1.parameters():
        p.data = p.data + rng.normal(size=p.data.shape)

    def dist():
        return np.sqrt(sum(((t.data - s.data) ** 2).sum()
                           for t, s in zip(agent.q1_target.parameters(), agent.q1.parameters())))
    d0 = dist()
    for _ in range(20):
        soft_update(agent.q1_target, agent.q1, 0.1)
    assert dist() == pytest.approx(d0 * 0.9 ** 20, rel=1e-9)


def test_critic_target_terminal():
    y = critic_target(np.array([[-3.0]]), np.array([[1.0]]), np.array([[7.0]]), np.array([[2.0]]),
                      np.array([[0.4]]), gamma=0.0, alpha=0.2)
    assert y[0, 0] == -3.0


def test_critic_target_scalar_recomputation(rng):
    n = 64
    r, d = rng.normal(size=(n, 1)), rng.integers(0, 2, (n, 1)).astype(float)
    q1, q2, lp = rng.normal(size=(n, 1)), rng.normal(size=(n, 1)), rng.normal(size=(n, 1))
    y = critic_target(r, d, q1, q2, lp, 0.99, 0.3)
    for i in range(n):
        ref = r[i, 0] + 0.99 * (1 - d[i, 0]) * (min(q1[i, 0], q2[i, 0]) - 0.3 * lp[i, 0])
        assert abs(y[i, 0] - ref) <= 1e-9


def _filled_buffer(n=256, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(STATE_DIM, 1000, seed)
    for _ in range(n):
        buf.add(rng.random(STATE_DIM), rng.random(), -rng.random(), rng.random(STATE_DIM), rng.random() < 0.1)
    return buf


def test_alpha_rises_when_entropy_below_target():
    agent = SacAgent(config=SacConfig(target_entropy=5.0), seed=0)
    buf = _filled_buffer()
    before = agent.alpha
    diag = agent.update(buf.sample(64))
    assert diag["entropy"] < 5.0
    assert agent.alpha > before


def test_alpha_falls_when_entropy_above_target():
    agent = SacAgent(config=SacConfig(target_entropy=-50.0), seed=0)
    before = agent.alpha
    agent.update(_filled_buffer().sample(64))
    assert agent.alpha < before


def test_squashed_actions_in_unit_interval(rng):
    u = rng.normal(0.0, 30.0, size=10 ** 6)
    a = squash(u)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_squashed_log_prob_matches_density(rng):
    # change of variables for tanh: numeric check against a histogram-free formula
    mean, log_std = 0.3, np.log(0.7)
    u = np.linspace(-2, 2, 9)
    lp = squashed_log_prob(Tensor(u), Tensor(np.full(9, mean)), Tensor(np.full(9, log_std))).data
    gauss = -0.5 * ((u - mean) / 0.7) ** 2 - np.log(0.7) - 0.5 * np.log(2 * np.pi)
    np.testing.assert_allclose(lp, gauss - np.log(1 - np.tanh(u) ** 2 + 1e-6), rtol=1e-6)


def test_greedy_ties_go_to_cpu():
    g = relu_chain(4)
    plan = greedy_schedule(g, uniform_profile(ratio=1.0, kappa_cpu=0.0))
    assert plan.modes == ["CPU"] * 4


def test_greedy_heavy_dense_goes_gpu(agx):
    nodes = [make_node(i, "Conv2d", (1, 64, 56, 56), (1, 64, 56, 56), 0.0, kernel=(3, 3, 64, 64)) for i in range(3)]
    assert greedy_schedule(chain_graph(nodes), agx).modes == ["GPU"] * 3


def test_dp_beats_greedy_on_random_chains(agx):
    for seed in range(10):
        g = random_chain(10, seed)
        dp = simulate(dp_schedule(g, agx), g, agx).total_latency
        gr = simulate(greedy_schedule(g, agx), g, agx).total_latency
        assert dp <= gr * (1 + 1e-12)


def test_dp_equals_greedy_without_transfer(agx):
    p = agx.with_(transfer_bandwidth=float("inf"), transfer_latency_fixed=0.0, switch_overhead=0.0)
    for seed in range(5):
        g = random_chain(10, seed)
        assert dp_schedule(g, p).modes == greedy_schedule(g, p).modes


def test_dp_single_node_and_non_chain(agx):
    g = relu_chain(1, shape=(1, 256, 64, 64))
    assert dp_schedule(g, agx).modes == greedy_schedule(g, agx).modes
    with pytest.raises(GraphError):
        dp_schedule(random_dag(8, 0, extra_edge_p=1.0), agx)


def test_static_quadrants(agx):
    q4 = make_node(0, "ReLU", (1, 8, 8, 8), (1, 8, 8, 8), 0.9)
    q1 = make_node(1, "Conv2d", (1, 64, 56, 56), (1, 64, 56, 56), 0.05, kernel=(3, 3, 64, 64))
    q2 = make_node(2, "Conv2d", (1, 64, 56, 56), (1, 64, 56, 56), 0.6, kernel=(3, 3, 64, 64))
    g = ModelGraph("quadrants", (q4, q1, q2), ())
    plan = static_threshold_schedule(g, agx, (0.5, 1e7))
    assert plan.modes == ["CPU", "GPU", "GPU"]


def test_every_scheduler_covers_graph(agx):
    g = random_chain(7, 3)
    for plan in (cpu_only(g), gpu_only(g), greedy_schedule(g, agx), dp_schedule(g, agx),
                 static_threshold_schedule(g, agx, (0.5, 1e8))):
        assert plan.covers(g)
        simulate(plan, g, agx)


FAST = SacConfig(warmup=64, eval_every=5)


def test_sac_gpu_dominant_toy():
    g = relu_chain(2)
    p = uniform_profile(ratio=10.0, kappa_cpu=0.0)
    res = train_sac(g, p, episodes=300, seed=0, config=FAST)
    assert res.plan.modes == ["GPU", "GPU"]


def test_sac_avoids_alternation_with_costly_transfer():
    nodes = [make_node(i, "ReLU", (1, 16, 8, 8), (1, 16, 8, 8), rho) for i, rho in enumerate([0.9, 0.0, 0.9, 0.0])]
    g = chain_graph(nodes)
    p = uniform_profile(ratio=1.2, kappa_cpu=0.5, transfer_bandwidth=1e3, switch=1e-3)
    res = train_sac(g, p, episodes=80, seed=0, config=FAST)
    modes = res.plan.modes
    assert len(set(modes)) == 1 and modes[0] != "SPLIT"


def test_sac_learning_curve_and_determinism(agx):
    g = random_chain(5, 1)
    a = train_sac(g, agx, episodes=60, seed=3, config=FAST)
    b = train_sac(g, agx, episodes=60, seed=3, config=FAST)
    assert a.plan == b.plan
    assert [r.ret for r in a.curve] == [r.ret for r in b.curve]
    k = len(a.curve) // 10
    assert np.mean([r.ret for r in a.curve[-k:]]) >= np.mean([r.ret for r in a.curve[:k]])
    assert a.curve_csv().splitlines()[0] == "episode,return,latency,alpha,policy_entropy"


def test_agent_checkpoint_round_trip(tmp_path):
    agent = SacAgent(seed=1)
    agent.update(_filled_buffer().sample(32))
    agent.save(tmp_path / "agent.json")
    other = SacAgent(seed=9)
    other.load(tmp_path / "agent.json")
    s = np.linspace(0, 1, STATE_DIM)
    assert other.act(s, deterministic=True) == agent.act(s, deterministic=True)
