"""PPO trainer: GAE, clipped surrogate with adaptive KL penalty, minibatch
epochs over rollouts collected from a batch of independent environments.

The minimized loss is

    L = -E[min(r A, clip(r, 1-eps, 1+eps) A)] + beta * E[KL(pi_old || pi)]
        + value_coef * E[(V - returns)^2]

with r the likelihood ratio against the rollout policy. The KL coefficient
beta doubles when the measured KL overshoots 1.5x its target and halves when
it undershoots the target by the same factor.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AmorphError, SimulationDivergedError
from .neural import (LOG_STD_MAX, LOG_STD_MIN, PolicyNetwork, gaussian_log_prob,
                     load_arrays, sample_action, save_arrays)
from .sim.snapshot import scene_from_dict, scene_to_dict
from .sim.types import SolverConfig
from .tasks.config import TaskConfig, TaskKind
from .tasks.env import ManipulationEnv, curriculum_update

log = logging.getLogger(__name__)

BETA_MIN = 1e-4
BETA_MAX = 10.0


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    kl_target: float = 0.01
    beta_init: float = 1.0
    lr: float = 3e-4
    n_envs: int = 49
    steps_per_env: int = 1000      # 49 envs x 1000 steps = 49,000 samples/iteration
    minibatch: int = 64
    epochs: int = 10
    iterations: int = 10
    adv_norm: bool = True
    value_coef: float = 0.5
    log_std_init: float = -0.5
    checkpoint_every: int = 10
    curriculum_window: int = 20
    curriculum_fraction: float = 0.7

    def validate(self):
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise AmorphError("gamma and lam must lie in [0, 1]")
        if self.clip_eps <= 0 or self.beta_init <= 0:
            raise AmorphError("clip_eps and beta_init must be positive")
        if self.n_envs < 1 or self.steps_per_env < 1 or self.minibatch < 1:
            raise AmorphError("n_envs, steps_per_env, minibatch must be >= 1")


def gae(rewards, values, dones, bootstrap, gamma: float, lam: float):
    """Generalized advantage estimation by backward recursion.

    Accepts (T,) streams or (n_envs, T) batches; `bootstrap` is the value of
    the state following the last step of each stream (ignored past terminal
    steps). Returns (advantages, returns) with returns = advantages + values.
    """
    was_1d = np.asarray(rewards).ndim == 1
    rewards = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    dones = np.atleast_2d(np.asarray(dones)).astype(np.float64)
    bootstrap = np.atleast_1d(np.asarray(bootstrap, dtype=np.float64))
    n, t = rewards.shape

    adv = np.zeros((n, t))
    next_value = bootstrap.copy()
    next_adv = np.zeros(n)
    for k in range(t - 1, -1, -1):
        live = 1.0 - dones[:, k]
        delta = rewards[:, k] + gamma * next_value * live - values[:, k]
        next_adv = delta + gamma * lam * live * next_adv
        adv[:, k] = next_adv
        next_value = values[:, k]
    returns = adv + values
    if was_1d:
        return adv[0], returns[0]
    return adv, returns


def adapt_beta(measured_kl: float, target_kl: float, beta: float) -> float:
    """Double/halve the KL coefficient outside the 1.5x band, then clamp."""
    if measured_kl > 1.5 * target_kl:
        beta = 2.0 * beta
    elif measured_kl < target_kl / 1.5:
        beta = 0.5 * beta
    return float(np.clip(beta, BETA_MIN, BETA_MAX))


def ppo_loss(net: PolicyNetwork, batch: dict, eps: float, beta: float,
             value_coef: float, compute_grads: bool = True):
    """Loss, per-term diagnostics, and exact parameter gradients for one batch.

    `batch` carries images, vecs, actions, advantages, returns plus the
    rollout policy's log-probs, means, and log-std.
    """
    mean, value, cache = net.forward(batch["images"], batch["vecs"])
    log_std = net.params["log_std"]
    sigma2 = np.exp(2.0 * log_std)
    b = mean.shape[0]

    actions = batch["actions"]
    adv = batch["advantages"]
    z = (actions - mean) / np.exp(log_std)
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * np.log(2 * np.pi) * mean.shape[1]
    ratio = np.exp(logp - batch["logp_old"])
    if not np.all(np.isfinite(ratio)):
        bad = int(np.flatnonzero(~np.isfinite(ratio))[0])
        raise AmorphError(f"non-finite likelihood ratio at sample {bad}")

    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    objective = np.minimum(unclipped, clipped)
    surrogate = -float(objective.mean())

    # KL(old || new) for diagonal Gaussians
    mu_old = batch["mean_old"]
    ls_old = batch["log_std_old"]
    var_old = np.exp(2.0 * ls_old)
    dmu2 = (mu_old - mean) ** 2
    kl_terms = (log_std - ls_old) + (var_old + dmu2) / (2.0 * sigma2) - 0.5
    kl = float(kl_terms.sum(axis=1).mean())

    v_err = value - batch["returns"]
    value_loss = float(np.mean(v_err ** 2))

    loss = surrogate + beta * kl + value_coef * value_loss
    diag = {"loss": loss, "surrogate": surrogate, "kl": kl, "value_loss": value_loss,
            "clip_fraction": float(np.mean(clipped < unclipped))}
    if not compute_grads:
        return loss, diag, None

    # d surrogate / d logp: gradient flows only where the unclipped branch wins
    pick = (unclipped <= clipped).astype(np.float64)
    g_logp = -(pick * ratio * adv) / b
    d_mean = g_logp[:, None] * (actions - mean) / sigma2
    d_log_std = (g_logp[:, None] * (z * z - 1.0)).sum(axis=0)

    d_mean += beta * (mean - mu_old) / sigma2 / b
    d_log_std += beta * (1.0 - (var_old + dmu2) / sigma2).sum(axis=0) / b

    d_value = 2.0 * value_coef * v_err / b

    grads = net.backward(cache, d_mean, d_value)
    grads["log_std"] = grads["log_std"] + d_log_std
    return loss, diag, grads


class Adam:
    """Bias-corrected first/second moment optimizer."""

    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(params):
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / c1
            vhat = self.v[name] / c2
            params[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def collect_rollouts(net: PolicyNetwork, envs: list, rngs: list,
                     obs_list: list, steps_per_env: int):
    """Advance every environment `steps_per_env` steps under the current policy.

    Environments are stepped in fixed index order with per-env action noise
    streams. Returns the trajectory batch (dict of (n_envs, T, ...) arrays),
    the final observations, and per-episode stats for completed episodes.
    """
    n = len(envs)
    t_len = steps_per_env
    m, nn = net.m, net.n
    images = np.zeros((n, t_len, m, nn, nn))
    vecs = np.zeros((n, t_len, net.vec_dim))
    actions = np.zeros((n, t_len, net.action_dim))
    logp_old = np.zeros((n, t_len))
    mean_old = np.zeros((n, t_len, net.action_dim))
    rewards = np.zeros((n, t_len))
    dones = np.zeros((n, t_len), dtype=bool)
    values_old = np.zeros((n, t_len))

    ep_returns = [0.0] * n
    completed: list[dict] = []
    metric_key = {TaskKind.GATHERING: "farthest_distance",
                  TaskKind.SPREADING: "occupied_cells",
                  TaskKind.FLIPPING: "d_ymin"}[envs[0].task.kind]
    log_std = net.params["log_std"]

    for t in range(t_len):
        img_in = np.stack([o.images for o in obs_list])
        vec_in = np.stack([o.vector() for o in obs_list])
        mean, value, _ = net.forward(img_in, vec_in)
        for e in range(n):
            act, logp = sample_action(mean[e], log_std, rngs[e])
            images[e, t] = img_in[e]
            vecs[e, t] = vec_in[e]
            actions[e, t] = act
            logp_old[e, t] = logp
            mean_old[e, t] = mean[e]
            values_old[e, t] = value[e]
            try:
                result = envs[e].step(act)
                rewards[e, t] = result.reward
                dones[e, t] = result.done
                obs = result.observation
                ep_returns[e] += result.reward
                if result.done:
                    completed.append({"return": ep_returns[e],
                                      "metric": float(result.info.get(metric_key, np.nan)),
                                      "level": envs[e].curriculum_level})
                    ep_returns[e] = 0.0
                    obs = envs[e].reset()
            except SimulationDivergedError as exc:
                log.warning("env %d diverged (%s); resetting", e, exc)
                rewards[e, t] = 0.0
                dones[e, t] = True
                ep_returns[e] = 0.0
                obs = envs[e].reset()
            obs_list[e] = obs

    img_in = np.stack([o.images for o in obs_list])
    vec_in = np.stack([o.vector() for o in obs_list])
    _, bootstrap, _ = net.forward(img_in, vec_in)

    batch = {"images": images, "vecs": vecs, "actions": actions,
             "logp_old": logp_old, "mean_old": mean_old, "rewards": rewards,
             "dones": dones, "values_old": values_old, "bootstrap": bootstrap}
    return batch, obs_list, completed


@dataclass
class IterationReport:
    iteration: int
    env_steps: int
    episodes: int
    mean_return: float
    metric_mean: float
    mean_kl: float
    surrogate: float
    value_loss: float
    beta: float
    curriculum_level: int
    aborted: bool = False

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


class Trainer:
    """Owns the network, optimizer, env batch, and the iteration loop."""

    def __init__(self, task: TaskConfig, solver: SolverConfig | None,
                 train: TrainConfig, seed: int = 0):
        train.validate()
        self.task = task
        self.solver = solver if solver is not None else SolverConfig()
        self.train_cfg = train
        self.seed = seed

        root = np.random.SeedSequence(seed)
        net_seed, shuffle_seed, env_root, action_root = root.spawn(4)
        obs_spec_env = ManipulationEnv(task, self.solver, seed=0)
        probe = obs_spec_env.reset(seed=12345)
        vec_dim = probe.vector().shape[0]

        self.net = PolicyNetwork(task.grid_n, len(task.channels()), vec_dim,
                                 task.action_dim(), seed=net_seed,
                                 log_std_init=train.log_std_init)
        self.adam = Adam(self.net.params, lr=train.lr)
        self.beta = train.beta_init
        self.shuffle_rng = np.random.default_rng(shuffle_seed)
        self.envs = [ManipulationEnv(task, self.solver, seed=s)
                     for s in env_root.spawn(train.n_envs)]
        self.action_rngs = [np.random.default_rng(s)
                            for s in action_root.spawn(train.n_envs)]
        self.obs_list = [env.reset() for env in self.envs]
        self.iteration = 0
        self.total_env_steps = 0
        self.level_history: dict[int, list[float]] = {}
        self.reports: list[IterationReport] = []

    @property
    def curriculum_level(self) -> int:
        return self.envs[0].curriculum_level

    def _curriculum_threshold(self) -> float:
        if self.task.curriculum_threshold is not None:
            return self.task.curriculum_threshold
        hist = self.level_history.get(self.curriculum_level, [])
        window = hist[-self.train_cfg.curriculum_window:]
        if not window:
            return np.inf
        return self.train_cfg.curriculum_fraction * max(window)

    def _maybe_advance_curriculum(self, mean_return: float) -> None:
        if self.task.kind is not TaskKind.GATHERING or not self.task.curriculum_enabled:
            return
        threshold = self._curriculum_threshold()
        level = self.curriculum_level
        new_level = curriculum_update(level, mean_return, threshold)
        self.level_history.setdefault(level, []).append(mean_return)
        if new_level != level:
            log.info("curriculum: level %d -> %d", level, new_level)
            for env in self.envs:
                env.curriculum_level = new_level

    def run_iteration(self) -> IterationReport:
        cfg = self.train_cfg
        batch, self.obs_list, completed = collect_rollouts(
            self.net, self.envs, self.action_rngs, self.obs_list, cfg.steps_per_env)
        n, t = batch["rewards"].shape
        self.total_env_steps += n * t

        adv, returns = gae(batch["rewards"], batch["values_old"], batch["dones"],
                           batch["bootstrap"], cfg.gamma, cfg.lam)
        if cfg.adv_norm:
            adv = (adv - adv.mean()) / max(adv.std(), 1e-8)

        total = n * t
        flat = {
            "images": batch["images"].reshape(total, self.net.m, self.net.n, self.net.n),
            "vecs": batch["vecs"].reshape(total, self.net.vec_dim),
            "actions": batch["actions"].reshape(total, self.net.action_dim),
            "logp_old": batch["logp_old"].reshape(total),
            "mean_old": batch["mean_old"].reshape(total, self.net.action_dim),
            "log_std_old": self.net.params["log_std"].copy(),
            "advantages": adv.reshape(total),
            "returns": returns.reshape(total),
        }

        start_params = {k: v.copy() for k, v in self.net.params.items()}
        start_adam = ({k: v.copy() for k, v in self.adam.m.items()},
                      {k: v.copy() for k, v in self.adam.v.items()}, self.adam.t)
        aborted = False
        kls: list[float] = []
        surrogates: list[float] = []
        vlosses: list[float] = []
        try:
            for epoch in range(cfg.epochs):
                perm = self.shuffle_rng.permutation(total)
                last_epoch = epoch == cfg.epochs - 1
                for lo in range(0, total, cfg.minibatch):
                    idx = perm[lo:lo + cfg.minibatch]
                    mb = {k: (v[idx] if k != "log_std_old" else v) for k, v in flat.items()}
                    loss, diag, grads = ppo_loss(self.net, mb, cfg.clip_eps,
                                                 self.beta, cfg.value_coef)
                    if not np.isfinite(loss):
                        raise AmorphError(f"non-finite loss at iteration {self.iteration}")
                    self.adam.step(self.net.params, grads)
                    np.clip(self.net.params["log_std"], LOG_STD_MIN, LOG_STD_MAX,
                            out=self.net.params["log_std"])
                    if last_epoch:
                        kls.append(diag["kl"])
                        surrogates.append(diag["surrogate"])
                        vlosses.append(diag["value_loss"])
        except AmorphError as exc:
            log.warning("iteration %d aborted: %s; parameters restored", self.iteration, exc)
            for k, v in start_params.items():
                self.net.params[k] = v
            self.adam.m, self.adam.v, self.adam.t = start_adam[0], start_adam[1], start_adam[2]
            aborted = True

        mean_kl = float(np.mean(kls)) if kls else 0.0
        if not aborted:
            self.beta = adapt_beta(mean_kl, cfg.kl_target, self.beta)

        mean_return = float(np.mean([c["return"] for c in completed])) if completed else 0.0
        metric_mean = float(np.nanmean([c["metric"] for c in completed])) if completed else np.nan
        if not aborted:
            self._maybe_advance_curriculum(mean_return)

        self.iteration += 1
        report = IterationReport(
            iteration=self.iteration, env_steps=self.total_env_steps,
            episodes=len(completed), mean_return=mean_return,
            metric_mean=metric_mean, mean_kl=mean_kl,
            surrogate=float(np.mean(surrogates)) if surrogates else 0.0,
            value_loss=float(np.mean(vlosses)) if vlosses else 0.0,
            beta=self.beta, curriculum_level=self.curriculum_level, aborted=aborted)
        self.reports.append(report)
        return report

    # --- persistence -----------------------------------------------------

    def save_state(self, path) -> None:
        arrays = dict(self.net.params)
        for k, v in self.adam.m.items():
            arrays[f"adam_m.{k}"] = v
        for k, v in self.adam.v.items():
            arrays[f"adam_v.{k}"] = v
        meta = {
            **self.net.meta(),
            "iteration": self.iteration,
            "total_env_steps": self.total_env_steps,
            "beta": self.beta,
            "adam_t": self.adam.t,
            "seed": self.seed,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "env_rngs": [e.rng.bit_generator.state for e in self.envs],
            "action_rngs": [r.bit_generator.state for r in self.action_rngs],
            "env_worlds": [scene_to_dict(e.world) for e in self.envs],
            "env_steps_taken": [e.steps_taken for e in self.envs],
            "curriculum_level": self.curriculum_level,
            "level_history": {str(k): v for k, v in self.level_history.items()},
        }
        save_arrays(path, meta, arrays)

    def load_state(self, path) -> None:
        meta, arrays = load_arrays(path)
        for name in self.net.params:
            self.net.params[name] = arrays[name].copy()
        for name in self.net.params:
            self.adam.m[name] = arrays[f"adam_m.{name}"].copy()
            self.adam.v[name] = arrays[f"adam_v.{name}"].copy()
        self.adam.t = meta["adam_t"]
        self.iteration = meta["iteration"]
        self.total_env_steps = meta["total_env_steps"]
        self.beta = meta["beta"]
        self.shuffle_rng.bit_generator.state = meta["shuffle_rng"]
        for env, state in zip(self.envs, meta["env_rngs"]):
            env.rng.bit_generator.state = state
        for rng, state in zip(self.action_rngs, meta["action_rngs"]):
            rng.bit_generator.state = state
        for env, world, steps in zip(self.envs, meta["env_worlds"], meta["env_steps_taken"]):
            env.world = scene_from_dict(world)
            env.steps_taken = steps
            env.curriculum_level = meta["curriculum_level"]
        self.obs_list = [env._observe() for env in self.envs]
        self.level_history = {int(k): list(v) for k, v in meta["level_history"].items()}
