import numpy as np
import pytest

from hzdwalk.gait import JointBounds
from hzdwalk.policy import (ConstantGaitPolicy, Observation, PolicyParams,
                            policy_output_bounds)
from hzdwalk.train import (EpisodeConfig, EsConfig, GaussianActor, PpoConfig,
                           WalkingEnv, centered_ranks, check_termination,
                           es_train, gae_advantages, gaussian_log_prob,
                           ppo_clip_loss, ppo_policy_gradient, rollout,
                           _gae_variable)
from hzdwalk.dynamics import ExternalForce, HybridState


# ---------------------------------------------------------------------------
# ES
# ---------------------------------------------------------------------------

def test_centered_ranks_properties(rng):
    x = rng.standard_normal(32)
    r = centered_ranks(x)
    assert r.min() == -0.5 and r.max() == 0.5
    assert abs(r.sum()) < 1e-12
    # monotone: best fitness gets the top rank
    assert r[np.argmax(x)] == 0.5


class _Vec:
    """Minimal parameter holder; es_train only needs flatten/with_flat."""

    def __init__(self, v):
        self.v = np.asarray(v, float)

    def flatten(self):
        return self.v.copy()

    def with_flat(self, vec):
        return _Vec(vec)


def test_es_shrinks_quadratic():
    """ES on -||theta||^2 must shrink the parameter norm by >= 90%."""
    init = _Vec(np.random.default_rng(7).uniform(-1.0, 1.0, 20))

    def fitness(theta, eval_seed):
        f = -float(theta @ theta)
        return f, f

    es = EsConfig(n_pop=32, sigma=0.05, learning_rate=0.02, iterations=200)
    trained, trace = es_train(init, es, fitness, seed=0)
    n0 = np.linalg.norm(init.flatten())
    n1 = np.linalg.norm(trained.flatten())
    assert n1 <= 0.1 * n0
    assert len(trace) == 200
    assert trace[-1]["fitness_mean"] > trace[0]["fitness_mean"]


def test_es_deterministic_for_fixed_seed():
    lo, hi = policy_output_bounds(JointBounds(), (5.0, 25.0))
    init = PolicyParams.create(lo, hi, rng=np.random.default_rng(3))

    def fitness(theta, eval_seed):
        f = -float(np.sum((theta - 0.1) ** 2))
        return f, f

    es = EsConfig(n_pop=8, iterations=5)
    a, _ = es_train(init, es, fitness, seed=42)
    b, _ = es_train(init, es, fitness, seed=42)
    assert np.array_equal(a.flatten(), b.flatten())


# ---------------------------------------------------------------------------
# GAE and the PPO surrogate
# ---------------------------------------------------------------------------

def gae_brute_force(rewards, values, gamma, lam):
    """O(T^2) definition: discounted sum of TD residuals."""
    T = len(rewards)
    deltas = [rewards[t] + gamma * values[t + 1] - values[t]
              for t in range(T)]
    return np.array([
        sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, T))
        for t in range(T)])


def test_gae_matches_brute_force(rng):
    for _ in range(20):
        T = rng.integers(1, 40)
        rewards = rng.standard_normal(T)
        values = rng.standard_normal(T + 1)
        ours = gae_advantages(rewards, values, 0.97, 0.9)
        oracle = gae_brute_force(rewards, values, 0.97, 0.9)
        assert np.allclose(ours, oracle, atol=1e-10)
    with pytest.raises(ValueError):
        gae_advantages(np.zeros(3), np.zeros(3), 0.99, 0.95)


def test_gae_variable_discount_reduces_to_fixed(rng):
    rewards = rng.standard_normal(10)
    values = rng.standard_normal(11)
    fixed = gae_advantages(rewards, values, 0.95, 0.9)
    variable = _gae_variable(rewards, values, np.full(10, 0.95), 0.9)
    assert np.allclose(fixed, variable, atol=1e-12)


def test_ppo_clip_loss_branch_cases():
    eps = 0.2
    # inside the trust region: unclipped value
    assert ppo_clip_loss(np.array([1.1]), np.array([2.0]), eps) == pytest.approx(2.2)
    # positive advantage, ratio above 1+eps: clipped at (1+eps)*adv
    assert ppo_clip_loss(np.array([1.5]), np.array([2.0]), eps) == pytest.approx(2.4)
    # negative advantage, ratio below 1-eps: clipped at (1-eps)*adv
    assert ppo_clip_loss(np.array([0.5]), np.array([-2.0]), eps) == pytest.approx(-1.6)


def test_ppo_gradient_matches_finite_differences(rng):
    lo, hi = policy_output_bounds(JointBounds(), (5.0, 25.0))
    policy = PolicyParams.create(lo, hi, rng=np.random.default_rng(5),
                                 scale=0.3)
    log_std = np.full(policy.n_out, -1.0)
    B = 6
    obs = rng.standard_normal((B, 3))
    z = rng.standard_normal((B, policy.n_out)) * 0.5
    logp_old = np.array([
        gaussian_log_prob(z[i], policy.mlp.forward(obs[i])[0], log_std)
        for i in range(B)]) + rng.uniform(-0.05, 0.05, B)
    adv = rng.standard_normal(B)
    batch = {"obs": obs, "z": z, "logp_old": logp_old, "adv": adv}

    loss, grad, grad_ls = ppo_policy_gradient(policy, log_std, batch, 0.2)
    theta = policy.flatten()
    h = 1e-6
    for k in rng.integers(0, theta.size, 8):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        lp, _, _ = ppo_policy_gradient(policy.with_flat(tp), log_std, batch, 0.2)
        lm, _, _ = ppo_policy_gradient(policy.with_flat(tm), log_std, batch, 0.2)
        fd = (lp - lm) / (2 * h)
        assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)
    for k in range(policy.n_out):
        lsp, lsm = log_std.copy(), log_std.copy()
        lsp[k] += h
        lsm[k] -= h
        lp, _, _ = ppo_policy_gradient(policy, lsp, batch, 0.2)
        lm, _, _ = ppo_policy_gradient(policy, lsm, batch, 0.2)
        fd = (lp - lm) / (2 * h)
        assert grad_ls[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_gaussian_actor_log_prob_consistency(rng):
    lo, hi = policy_output_bounds(JointBounds(), (5.0, 25.0))
    policy = PolicyParams.create(lo, hi, rng=np.random.default_rng(1))
    actor = GaussianActor(policy, np.full(policy.n_out, -1.0),
                          np.random.default_rng(2))
    obs = Observation(1.0, 0.9, 0.1)
    actor.act(obs)
    x, z, logp = actor.transitions[-1]
    mu, _ = policy.mlp.forward(obs.as_array())
    expect = gaussian_log_prob(z, mu, np.full(policy.n_out, -1.0))
    assert logp == pytest.approx(expect)
    assert np.array_equal(x, obs.as_array())


# ---------------------------------------------------------------------------
# Rollout semantics
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def env():
    return WalkingEnv()


@pytest.fixture(scope="module")
def reference_policy():
    from hzdwalk.gait import extract_free_params, load_gait_json
    from hzdwalk.refgait import shipped_gait_path
    alpha, kd = load_gait_json(shipped_gait_path())
    return ConstantGaitPolicy(extract_free_params(alpha), kd)


def test_rollout_deterministic(env, reference_policy):
    cfg = EpisodeConfig(max_sim_steps=1500, seed=0)
    a = rollout(reference_policy, env, cfg, seed=0,
                v_d_schedule=[(0.0, 1.0)])
    b = rollout(reference_policy, env, cfg, seed=0,
                v_d_schedule=[(0.0, 1.0)])
    assert np.array_equal(a.log.data, b.log.data)
    assert a.fitness == b.fitness


def test_rollout_log_schema(env, reference_policy):
    cfg = EpisodeConfig(max_sim_steps=1500, seed=0)
    res = rollout(reference_policy, env, cfg, seed=0,
                  v_d_schedule=[(0.0, 1.0)])
    log = res.log
    n = log.data.shape[0]
    assert log.q.shape == (n, 5)
    assert log.u.shape == (n, 4)
    # times advance strictly, rewards are non-positive
    assert np.all(np.diff(log.time) > 0)
    assert np.all(log.reward <= 0.0)
    # event rows mark completed steps
    assert log.event_flag.sum() == res.steps_completed
    assert res.termination == "timeout"


def test_rollout_reward_is_windowed_speed_error(env, reference_policy):
    cfg = EpisodeConfig(max_sim_steps=800, seed=0, window_capacity=200)
    res = rollout(reference_policy, env, cfg, seed=0,
                  v_d_schedule=[(0.0, 1.0)])
    v = res.log.v_inst
    k = 300
    v_bar = v[max(0, k - 199):k + 1].mean()
    assert res.log.reward[k] == pytest.approx(-(v_bar - 1.0) ** 2)
    # discounted return accumulates the logged rewards
    gammas = cfg.gamma ** np.arange(len(v))
    assert res.discounted_return == pytest.approx(
        float(gammas @ res.log.reward), rel=1e-9)


def test_rollout_fall_penalty(env):
    """A gait that falls must score no better than standing still after the
    fall for the rest of the horizon."""
    bad = ConstantGaitPolicy(np.full(20, 0.1), 10.0)
    cfg = EpisodeConfig(max_sim_steps=2000, seed=0)
    res = rollout(bad, env, cfg, seed=0, v_d_schedule=[(0.0, 1.0)])
    assert res.termination != "timeout"
    assert res.fitness < res.discounted_return


def test_rollout_disturbance_changes_trajectory(env, reference_policy):
    cfg = EpisodeConfig(max_sim_steps=1500, seed=0)
    base = rollout(reference_policy, env, cfg, seed=0,
                   v_d_schedule=[(0.0, 1.0)])
    pushed = rollout(reference_policy, env, cfg, seed=0,
                     v_d_schedule=[(0.0, 1.0)],
                     disturbance=ExternalForce(-30.0, 1.0, 1.1))
    assert not np.array_equal(base.log.q, pushed.log.q)
    # identical before the push switches on
    k = int(0.9 / env.integrator.dt)
    assert np.array_equal(base.log.q[:k], pushed.log.q[:k])


def test_termination_checks(env):
    # slight crouch keeps the hip inside the open height interval
    ok = HybridState(q=np.array([0.0, 0.05, 0.2, -0.05, 0.2]), dq=np.zeros(5))
    assert check_termination(ok, env) is None
    lean = HybridState(q=np.array([0.55, 0, 0.1, 0, 0.1]), dq=np.zeros(5))
    assert check_termination(lean, env) == "fall-torso"
    crouch = HybridState(q=np.array([0.0, 0.3, 1.4, 0.3, 1.4]),
                         dq=np.zeros(5))
    assert check_termination(crouch, env) == "fall-height"


def test_episode_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(gamma=0.0)
    with pytest.raises(ValueError):
        EpisodeConfig(v_d_range=(1.5, 0.7))
    with pytest.raises(ValueError):
        EsConfig(n_pop=7, antithetic=True)
    with pytest.raises(ValueError):
        PpoConfig(clip_eps=1.5)
