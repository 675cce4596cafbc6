"""Episode generation and the two policy trainers.

A rollout composes the whole pipeline: the policy is queried once per walking
step (at episode start and immediately after every impact), its output is
expanded into Bezier coefficients, the virtual constraints are tracked by the
adaptive PD law at every simulation step, and the hybrid integrator advances
the model.  Reward per simulation step is the negative squared windowed speed
error; an episode ends on a posture violation, integrator divergence, or the
step horizon.

Trainers: antithetic Evolution Strategies with centered-rank fitness shaping,
and PPO with a clipped surrogate, GAE, and a small value network.  Both are
deterministic given (config, seed, worker partitioning).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .control import PDGains, pd_torque
from .dynamics import (
    DIVERGENCE_LIMIT,
    DivergenceError,
    Dynamics,
    ExternalForce,
    HybridState,
    ImpactError,
    IntegratorConfig,
)
from .gait import (
    JointBounds,
    PhaseConfig,
    bezier_derivative,
    bezier_eval,
    desired_outputs,
    expand_free_params,
)
from .model import ChainTables, RobotParams, hip_jacobian
from .policy import Mlp, Observation, ObsWindow, PolicyParams, observe, sigmoid
from . import _rollout_kernel as rk
from .model import SEG_ANGLE_ROWS, SEG_COS_SIGN

TERMINATION_REASONS = ("fall-torso", "fall-height", "timeout", "divergence",
                       "impact-infeasible")

TORSO_LIMIT = 0.5          # rad, |q_t| bound
HIP_HEIGHT_RANGE = (0.6, 0.8)  # m, open interval


@dataclass(frozen=True)
class EpisodeConfig:
    max_sim_steps: int = 4000
    gamma: float = 0.99
    v_d_range: tuple[float, float] = (0.7, 1.5)
    mid_episode_resample: bool = True
    window_capacity: int = 200
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.v_d_range[0] <= 0 or self.v_d_range[1] < self.v_d_range[0]:
            raise ValueError("v_d_range must be positive and ordered")


@dataclass
class WalkingEnv:
    """Bundle of everything a rollout needs besides the policy."""

    robot: RobotParams = field(default_factory=RobotParams.default)
    phase: PhaseConfig = field(default_factory=PhaseConfig)
    bounds: JointBounds = field(default_factory=JointBounds)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    kp: float = 150.0
    torque_limit: float = 150.0
    kd_range: tuple[float, float] = (5.0, 25.0)
    friction_mu: float = 0.8

    def __post_init__(self):
        self.dynamics = Dynamics(self.robot, self.friction_mu)
        self.tables = self.dynamics.tables

    def initial_state(self, alpha: np.ndarray, v0: float) -> HybridState:
        """Deterministic start-of-step state consistent with the gait.

        Actuated joints sit on the desired outputs at phase 0; the torso
        angle is solved so the hip starts at the phase-begin position, and
        velocities are chosen so the hip moves forward at v0 while the
        actuated joints follow the desired velocity field.
        """
        q_act = bezier_eval(alpha, 0.0)
        q = np.zeros(5)
        q[1:5] = q_act

        def hip_err(qt):
            qq = q.copy()
            qq[0] = qt
            from .model import hip_position_x
            return hip_position_x(qq, self.robot, self.tables) - self.phase.p_begin

        lo, hi = -0.6, 0.6
        if hip_err(lo) * hip_err(hi) < 0:
            q[0] = brentq(hip_err, lo, hi, xtol=1e-12)

        tau_dot = v0 / self.phase.span
        dq = np.zeros(5)
        dq[1:5] = bezier_derivative(alpha, 0.0) * tau_dot
        jx = hip_jacobian(q, self.robot, self.tables)[0]
        if abs(jx[0]) > 1e-9:
            dq[0] = (v0 - jx[1:] @ dq[1:]) / jx[0]
        return HybridState(q=q, dq=dq)


class RolloutLog:
    """Per-simulation-step record of one episode, one row per step.

    Backed by a single (n, 21) float array shared with the simulation
    kernel; named columns are exposed as views.
    """

    def __init__(self, data: np.ndarray):
        self.data = data
        self.n = data.shape[0]

    @property
    def time(self):
        return self.data[:, rk.COL_TIME]

    @property
    def q(self):
        return self.data[:, rk.COL_Q:rk.COL_Q + 5]

    @property
    def dq(self):
        return self.data[:, rk.COL_DQ:rk.COL_DQ + 5]

    @property
    def u(self):
        return self.data[:, rk.COL_U:rk.COL_U + 4]

    @property
    def tau_phase(self):
        return self.data[:, rk.COL_TAU]

    @property
    def step_index(self):
        return self.data[:, rk.COL_STEP].astype(int)

    @property
    def event_flag(self):
        return self.data[:, rk.COL_EVENT].astype(int)

    @property
    def v_inst(self):
        return self.data[:, rk.COL_VINST]

    @property
    def v_d(self):
        return self.data[:, rk.COL_VD]

    @property
    def reward(self):
        return self.data[:, rk.COL_REWARD]

    @property
    def stance_foot_x(self):
        return self.data[:, rk.COL_SFX]


@dataclass
class RolloutResult:
    discounted_return: float
    fitness: float
    rewards: np.ndarray
    termination: str
    steps_completed: int
    final_time: float
    log: RolloutLog | None
    v_d_values: list[float]
    query_steps: list[int]  # sim-step indices at which the policy was queried


def step_reward(window: ObsWindow) -> float:
    """Negative squared windowed speed error; zero only at perfect tracking."""
    return -((window.v_bar - window.v_d) ** 2)


def check_termination(state: HybridState, env: WalkingEnv) -> str | None:
    """Posture constraints: torso angle bound and open hip-height interval."""
    if abs(state.q[0]) >= TORSO_LIMIT:
        return "fall-torso"
    from .model import hip_height
    z = hip_height(state.q, env.robot, env.tables)
    if not HIP_HEIGHT_RANGE[0] < z < HIP_HEIGHT_RANGE[1]:
        return "fall-height"
    return None


def rollout(policy, env: WalkingEnv, cfg: EpisodeConfig,
            disturbance=None, seed=None, v_d_schedule=None,
            keep_log: bool = True, v_init: float | None = None) -> RolloutResult:
    """Run one episode.

    ``policy`` needs an ``act(Observation) -> (free20, kd)`` method.  When
    ``v_d_schedule`` (list of (t, v_d) pairs) is given it overrides the
    random desired-speed protocol.  The fitness adds a fall penalty equal to
    the discounted reward of standing still for the unrealized horizon, so
    early termination cannot outscore walking.
    """
    rng = np.random.default_rng(seed if seed is not None else cfg.seed)
    dyn = env.dynamics
    tab = env.tables
    dt = env.integrator.dt

    if v_d_schedule is not None:
        sched = sorted((float(t), float(v)) for t, v in v_d_schedule)
        v_d = sched[0][1]
    else:
        sched = None
        v_d = float(rng.uniform(*cfg.v_d_range))
    v_d_values = [v_d]

    v0 = v_d if v_init is None else v_init
    obs = Observation(v_d=v_d, v_bar=v0, e_bar=v_d - v0)
    free, kd = policy.act(obs)
    alpha = expand_free_params(free, env.bounds)
    state = env.initial_state(alpha, v0)
    q = state.q.copy()
    dq = state.dq.copy()
    t = 0.0
    stance_foot_x = 0.0
    step_index = 0

    win_buf = np.zeros(cfg.window_capacity)
    win_buf[0] = dyn.hip_forward_velocity(q, dq)
    win_idx, win_n = 1 % cfg.window_capacity, 1

    if disturbance is None:
        fseq = []
    elif isinstance(disturbance, ExternalForce):
        fseq = [disturbance]
    else:
        fseq = list(disturbance)
    fx_arr = np.array([f.fx for f in fseq], float)
    ton_arr = np.array([f.t_on for f in fseq], float)
    toff_arr = np.array([f.t_off for f in fseq], float)

    log = np.zeros((cfg.max_sim_steps, rk.LOG_COLS))
    u_ev = np.zeros(4)
    geom = (SEG_ANGLE_ROWS, SEG_COS_SIGN, tab.com, tab.masses, tab.inertias,
            tab.gravity, tab.swing_foot, tab.hip)

    ret = 0.0
    disc = 1.0
    k_done = 0
    query_steps = [0]
    reason = "timeout"
    resample_step = cfg.max_sim_steps // 2
    resampled = False

    def current_sched_vd(now):
        v = sched[0][1]
        for t_cmd, v_cmd in sched:
            if now >= t_cmd:
                v = v_cmd
        return v

    while k_done < cfg.max_sim_steps:
        chunk = cfg.max_sim_steps - k_done
        if sched is not None:
            v_d = current_sched_vd(t)
            future = [tc for tc, _ in sched if tc > t + 0.5 * dt]
            if future:
                chunk = min(chunk, max(1, int(np.ceil((future[0] - t) / dt))))
        elif cfg.mid_episode_resample and not resampled:
            if k_done >= resample_step:
                v_d = float(rng.uniform(*cfg.v_d_range))
                v_d_values.append(v_d)
                resampled = True
            else:
                chunk = min(chunk, resample_step - k_done)

        code, n, t, win_idx, win_n, disc, ret = rk.walk_chunk(
            *geom, q, dq, t, alpha, env.phase.p_begin, env.phase.p_end,
            env.kp, kd, env.torque_limit,
            fx_arr, ton_arr, toff_arr,
            win_buf, win_idx, win_n, v_d, disc, cfg.gamma, ret,
            chunk, dt, env.integrator.event_bisection_tol,
            DIVERGENCE_LIMIT, TORSO_LIMIT,
            HIP_HEIGHT_RANGE[0], HIP_HEIGHT_RANGE[1],
            log, k_done, step_index, u_ev)
        log[k_done:k_done + n, rk.COL_SFX] = stance_foot_x
        k_done += n

        if code == rk.CHUNK_BUDGET:
            continue
        if code == rk.CHUNK_DIVERGED:
            reason = "divergence"
            break
        if code in (rk.CHUNK_FALL_TORSO, rk.CHUNK_FALL_HEIGHT):
            reason = ("fall-torso" if code == rk.CHUNK_FALL_TORSO
                      else "fall-height")
            break

        # impact: q/dq hold the localized pre-impact state
        pre = HybridState(q.copy(), dq.copy(), t, step_index, stance_foot_x)
        try:
            post = dyn.impact_map(pre)
        except ImpactError:
            reason = "impact-infeasible"
            break
        q[:] = post.q
        dq[:] = post.dq
        step_index = post.step_index
        stance_foot_x = post.stance_foot_x

        v_inst = dyn.hip_forward_velocity(q, dq)
        win_buf[win_idx] = v_inst
        win_idx = (win_idx + 1) % cfg.window_capacity
        win_n = min(win_n + 1, cfg.window_capacity)
        v_bar = float(np.mean(win_buf[:win_n]))
        r = -((v_bar - v_d) ** 2)
        ret += disc * r
        disc *= cfg.gamma

        from .gait import phase as phase_fn
        row = log[k_done]
        row[rk.COL_TIME] = t
        row[rk.COL_Q:rk.COL_Q + 5] = q
        row[rk.COL_DQ:rk.COL_DQ + 5] = dq
        row[rk.COL_U:rk.COL_U + 4] = u_ev
        row[rk.COL_TAU] = phase_fn(q, env.phase, env.robot, tab)
        row[rk.COL_STEP] = step_index
        row[rk.COL_EVENT] = 1.0
        row[rk.COL_VINST] = v_inst
        row[rk.COL_VD] = v_d
        row[rk.COL_REWARD] = r
        row[rk.COL_SFX] = stance_foot_x
        k_done += 1

        window = ObsWindow(cfg.window_capacity, v_d)
        window._buf[:win_n] = win_buf[:win_n] if win_n < cfg.window_capacity else win_buf
        window._n, window._idx = win_n, win_idx
        free, kd = policy.act(observe(window))
        alpha = expand_free_params(free, env.bounds)
        query_steps.append(k_done)

        post_state = HybridState(q, dq, t, step_index, stance_foot_x)
        stop = check_termination(post_state, env)
        if stop is not None:
            reason = stop
            break

    fitness = ret
    if reason != "timeout":
        # Treat the robot as stationary for the unrealized horizon.
        remaining = cfg.max_sim_steps - k_done
        if cfg.gamma < 1.0:
            tail = disc * (1.0 - cfg.gamma ** remaining) / (1.0 - cfg.gamma)
        else:
            tail = float(remaining)
        fitness += -(v_d ** 2) * tail

    log = log[:k_done]
    return RolloutResult(
        discounted_return=ret,
        fitness=fitness,
        rewards=log[:, rk.COL_REWARD].copy(),
        termination=reason,
        steps_completed=step_index,
        final_time=t,
        log=RolloutLog(log) if keep_log else None,
        v_d_values=v_d_values,
        query_steps=query_steps,
    )


# ---------------------------------------------------------------------------
# Evolution Strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EsConfig:
    n_pop: int = 32
    sigma: float = 0.05
    learning_rate: float = 0.02
    iterations: int = 200
    antithetic: bool = True

    def __post_init__(self):
        if self.antithetic and self.n_pop % 2 != 0:
            raise ValueError("population must be even with antithetic sampling")


def centered_ranks(x: np.ndarray) -> np.ndarray:
    """Map fitness values to centered ranks in [-0.5, 0.5]."""
    ranks = np.empty(len(x), dtype=float)
    ranks[np.argsort(x)] = np.arange(len(x))
    if len(x) > 1:
        ranks = ranks / (len(x) - 1) - 0.5
    else:
        ranks[:] = 0.0
    return ranks


def make_rollout_fitness(template: PolicyParams, env: WalkingEnv,
                         ep_cfg: EpisodeConfig):
    """Fitness function evaluating one seeded rollout per parameter vector."""

    def fn(theta: np.ndarray, eval_seed: int) -> tuple[float, float]:
        pol = template.with_flat(theta)
        res = rollout(pol, env, ep_cfg, seed=eval_seed, keep_log=False)
        return res.fitness, res.discounted_return

    return fn


def es_train(init: PolicyParams, es: EsConfig, fitness_fn, seed: int,
             workers: int = 1, budget_seconds: float | None = None,
             target_fitness: float | None = None, track_center: bool = False,
             verbose: bool = False):
    """Antithetic ES with centered-rank shaping.

    ``fitness_fn(theta, eval_seed) -> (fitness, return)`` is evaluated once
    per sampled candidate; all candidates within an iteration share the same
    evaluation seed.  Returns the trained policy and a per-iteration trace.

    With ``track_center`` the post-update center is also scored each
    iteration on two fixed held-out seeds and the best-scoring center seen
    is returned instead of the final one.  The candidate fitness landscape
    here has a cliff (falling forfeits the rest of the episode), so the
    final center of a noisy run is not necessarily its best iterate.
    """
    theta = init.flatten()
    n = theta.size
    trace = []
    center_seeds = [int(np.random.SeedSequence([seed, 999, k]).generate_state(1)[0])
                    for k in range(2)]
    best_theta, best_center_fit = theta.copy(), -np.inf
    t_start = time.monotonic()
    pool = None
    if workers > 1:
        import multiprocessing as mp
        pool = mp.Pool(workers)
    try:
        for it in range(es.iterations):
            noise_rng = np.random.default_rng(
                np.random.SeedSequence([seed, it]))
            if es.antithetic:
                half = noise_rng.standard_normal((es.n_pop // 2, n))
                eps = np.concatenate([half, -half])
            else:
                eps = noise_rng.standard_normal((es.n_pop, n))
            eval_seed = int(np.random.SeedSequence([seed, it, 777]).generate_state(1)[0])
            cands = theta + es.sigma * eps
            if pool is not None:
                out = pool.starmap(fitness_fn,
                                   [(c, eval_seed) for c in cands])
            else:
                out = [fitness_fn(c, eval_seed) for c in cands]
            fit = np.array([o[0] for o in out])
            rets = np.array([o[1] for o in out])
            shaped = centered_ranks(fit)
            theta = theta + es.learning_rate / (es.n_pop * es.sigma) * (shaped @ eps)
            entry = {
                "iteration": it,
                "fitness_mean": float(fit.mean()),
                "fitness_best": float(fit.max()),
                "return_mean": float(rets.mean()),
                "return_best": float(rets.max()),
            }
            if track_center:
                center_fit = float(np.mean(
                    [fitness_fn(theta, s)[0] for s in center_seeds]))
                entry["center_fitness"] = center_fit
                if center_fit > best_center_fit:
                    best_center_fit = center_fit
                    best_theta = theta.copy()
            wall = time.monotonic() - t_start
            entry["wall_clock"] = wall
            trace.append(entry)
            if verbose:
                print(f"[es] iter {it:4d} mean {fit.mean():10.3f} "
                      f"best {fit.max():10.3f} ({wall:6.1f}s)")
            if target_fitness is not None and fit.mean() >= target_fitness:
                break
            if budget_seconds is not None and wall > budget_seconds:
                break
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return init.with_flat(best_theta if track_center else theta), trace


# ---------------------------------------------------------------------------
# PPO
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    value_hidden: tuple[int, ...] = (12, 12)
    epochs: int = 4
    minibatch: int = 64
    init_log_std: float = -1.0
    learning_rate: float = 3e-3
    value_learning_rate: float = 1e-2
    episodes_per_batch: int = 4
    iterations: int = 20

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip epsilon must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


def gae_advantages(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates from rewards and a value trace of
    length len(rewards) + 1."""
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    if values.shape != (rewards.size + 1,):
        raise ValueError("values must have length len(rewards) + 1")
    adv = np.zeros(rewards.size)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv


def _gae_variable(rewards, values, gammas, lam):
    """GAE with a per-transition discount (macro-steps of unequal length)."""
    adv = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gammas[t] * values[t + 1] - values[t]
        acc = delta + gammas[t] * lam * acc
        adv[t] = acc
    return adv


def ppo_clip_loss(g: np.ndarray, adv: np.ndarray, eps: float) -> float:
    """Clipped surrogate objective (to be maximized); mean over the batch."""
    g = np.asarray(g, float)
    adv = np.asarray(adv, float)
    return float(np.mean(np.minimum(g * adv, np.clip(g, 1.0 - eps, 1.0 + eps) * adv)))


class GaussianActor:
    """Exploration wrapper: Gaussian noise on the pre-sigmoid policy output.

    Records (observation, sampled pre-sigmoid action, log-probability) at
    every query so the trainer can evaluate probability ratios later.
    """

    def __init__(self, policy: PolicyParams, log_std: np.ndarray,
                 rng: np.random.Generator, deterministic: bool = False):
        self.policy = policy
        self.log_std = np.asarray(log_std, float)
        self.rng = rng
        self.deterministic = deterministic
        self.transitions: list[tuple[np.ndarray, np.ndarray, float]] = []

    def act(self, obs: Observation):
        x = obs.as_array()
        mu, _ = self.policy.mlp.forward(x)
        if self.deterministic:
            z = mu
        else:
            z = mu + np.exp(self.log_std) * self.rng.standard_normal(mu.size)
        logp = gaussian_log_prob(z, mu, self.log_std)
        self.transitions.append((x, z, logp))
        out = self.policy.bound(z)
        if self.policy.n_out == 21:
            return out[:20], float(out[20])
        return out, self.policy.kd_fixed


def gaussian_log_prob(z, mu, log_std):
    std2 = np.exp(2.0 * log_std)
    return float(-0.5 * np.sum((z - mu) ** 2 / std2)
                 - np.sum(log_std) - 0.5 * z.size * np.log(2.0 * np.pi))


def ppo_policy_gradient(policy: PolicyParams, log_std: np.ndarray, batch,
                        eps: float):
    """Loss and ascent gradients of the clipped surrogate.

    ``batch`` is a dict with arrays ``obs`` (B,3), ``z`` (B,n_out),
    ``logp_old`` (B,), ``adv`` (B,).  Returns (loss, grad_theta,
    grad_log_std).
    """
    obs = batch["obs"]
    zs = batch["z"]
    logp_old = batch["logp_old"]
    adv = batch["adv"]
    n = obs.shape[0]
    std2 = np.exp(2.0 * log_std)

    grad = np.zeros(policy.param_count())
    grad_ls = np.zeros_like(log_std)
    loss = 0.0
    for i in range(n):
        mu, acts = policy.mlp.forward(obs[i])
        logp = gaussian_log_prob(zs[i], mu, log_std)
        g = np.exp(logp - logp_old[i])
        unclipped = g * adv[i]
        clipped = np.clip(g, 1.0 - eps, 1.0 + eps) * adv[i]
        loss += min(unclipped, clipped)
        if unclipped <= clipped:  # unclipped branch active
            dmu = (zs[i] - mu) / std2  # d logp / d mu
            coeff = g * adv[i]
            grad += policy.mlp.vjp(acts, coeff * dmu)
            grad_ls += coeff * ((zs[i] - mu) ** 2 / std2 - 1.0)
    return loss / n, grad / n, grad_ls / n


class Adam:
    def __init__(self, size: int, lr: float):
        self.lr = lr
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad ** 2
        mhat = self.m / (1.0 - 0.9 ** self.t)
        vhat = self.v / (1.0 - 0.999 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + 1e-8)


def value_fit_step(vnet: Mlp, obs: np.ndarray, targets: np.ndarray,
                   adam: Adam) -> float:
    """One Adam step of mean-squared-error regression; returns the loss."""
    n = obs.shape[0]
    grad = np.zeros(vnet.param_count())
    loss = 0.0
    for i in range(n):
        z, acts = vnet.forward(obs[i])
        err = z[0] - targets[i]
        loss += err ** 2
        grad += vnet.vjp(acts, np.array([2.0 * err]))
    newv = vnet.flatten() + adam.step(-grad / n)  # descend MSE
    vnet.weights = vnet.unflatten(newv).weights
    vnet.biases = vnet.unflatten(newv).biases
    return loss / n


def ppo_update(policy: PolicyParams, log_std: np.ndarray, batch,
               cfg: PpoConfig, adam_theta: Adam, adam_ls: Adam,
               rng: np.random.Generator):
    """Epochs of minibatch ascent on the clipped surrogate; returns the new
    policy, log_std, and the last full-batch loss."""
    n = batch["obs"].shape[0]
    theta = policy.flatten()
    last_loss = 0.0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            mb = {k: batch[k][idx] for k in ("obs", "z", "logp_old", "adv")}
            pol = policy.with_flat(theta)
            loss, g_theta, g_ls = ppo_policy_gradient(pol, log_std, mb,
                                                      cfg.clip_eps)
            theta = theta + adam_theta.step(g_theta)   # ascent
            log_std = log_std + adam_ls.step(g_ls)
            last_loss = loss
    return policy.with_flat(theta), log_std, last_loss


def ppo_train(init: PolicyParams, ppo: PpoConfig, env: WalkingEnv,
              ep_cfg: EpisodeConfig, seed: int,
              budget_seconds: float | None = None, verbose: bool = False):
    """Clipped-surrogate policy optimization on the walking task."""
    policy = init
    log_std = np.full(init.n_out, ppo.init_log_std)
    vnet = Mlp.random((3, *ppo.value_hidden, 1),
                      np.random.default_rng(np.random.SeedSequence([seed, 91])))
    adam_theta = Adam(policy.param_count(), ppo.learning_rate)
    adam_ls = Adam(log_std.size, ppo.learning_rate)
    adam_v = Adam(vnet.param_count(), ppo.value_learning_rate)
    trace = []
    t_start = time.monotonic()

    for it in range(ppo.iterations):
        rng = np.random.default_rng(np.random.SeedSequence([seed, it, 5]))
        obs_l, z_l, logp_l, rew_l, gam_l, ep_bounds = [], [], [], [], [], []
        rets = []
        for ep in range(ppo.episodes_per_batch):
            actor = GaussianActor(policy, log_std, rng)
            res = rollout(actor, env, ep_cfg,
                          seed=int(np.random.SeedSequence(
                              [seed, it, ep]).generate_state(1)[0]),
                          keep_log=False)
            rets.append(res.discounted_return)
            # Macro-step rewards: sum of per-dt rewards between queries.
            qs = res.query_steps + [res.rewards.size]
            start = len(obs_l)
            for j, (x, z, logp) in enumerate(actor.transitions):
                a, b = qs[j], qs[j + 1]
                obs_l.append(x)
                z_l.append(z)
                logp_l.append(logp)
                rew_l.append(float(np.sum(res.rewards[a:b])))
                gam_l.append(ep_cfg.gamma ** max(b - a, 1))
            ep_bounds.append((start, len(obs_l)))

        obs_a = np.array(obs_l)
        values = np.array([vnet.forward(x)[0][0] for x in obs_a])
        adv = np.zeros(len(obs_l))
        targets = np.zeros(len(obs_l))
        for (a, b) in ep_bounds:
            v_ep = np.concatenate([values[a:b], [0.0]])  # terminal value 0
            adv[a:b] = _gae_variable(rew_l[a:b], v_ep, gam_l[a:b],
                                     ppo.gae_lambda)
            targets[a:b] = adv[a:b] + values[a:b]
        if adv.std() > 1e-8:
            adv = (adv - adv.mean()) / adv.std()

        batch = {"obs": obs_a, "z": np.array(z_l),
                 "logp_old": np.array(logp_l), "adv": adv}
        policy, log_std, loss = ppo_update(policy, log_std, batch, ppo,
                                           adam_theta, adam_ls, rng)
        for _ in range(ppo.epochs):
            vloss = value_fit_step(vnet, obs_a, targets, adam_v)
        wall = time.monotonic() - t_start
        trace.append({"iteration": it, "return_mean": float(np.mean(rets)),
                      "loss": float(loss), "value_loss": float(vloss),
                      "wall_clock": wall})
        if verbose:
            print(f"[ppo] iter {it:3d} return {np.mean(rets):10.3f} "
                  f"loss {loss:8.4f} ({wall:6.1f}s)")
        if budget_seconds is not None and wall > budget_seconds:
            break
    return policy, trace
