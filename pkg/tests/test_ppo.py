import numpy as np
import pytest

from amorph.errors import AmorphError
from amorph.neural import PolicyNetwork, sample_action
from amorph.ppo import (Adam, TrainConfig, Trainer, adapt_beta, collect_rollouts,
                        gae, ppo_loss)
from amorph.tasks import ManipulationEnv, TaskConfig, TaskKind


def brute_force_gae(rewards, values, dones, bootstrap, gamma, lam):
    t_len = len(rewards)
    vnext = np.concatenate([values[1:], [bootstrap]])
    deltas = rewards + gamma * vnext * (1.0 - dones) - values
    adv = np.zeros(t_len)
    for t in range(t_len):
        acc = 0.0
        scale = 1.0
        for l in range(t, t_len):
            acc += scale * deltas[l]
            if dones[l]:
                break
            scale *= gamma * lam
        adv[t] = acc
    return adv, adv + values


def tiny_task(horizon=6, count=6):
    return TaskConfig(kind=TaskKind.GATHERING, particle_count=count, horizon=horizon,
                      curriculum_enabled=False)


def tiny_train(**kw):
    base = dict(n_envs=2, steps_per_env=12, minibatch=8, epochs=2, iterations=2,
                lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


class TestGAE:
    def test_single_step_identity(self):
        # gamma=1, single step: A = r + V(s') - V(s)
        adv, ret = gae([2.0], [0.7], [False], 1.5, 1.0, 0.95)
        assert adv[0] == pytest.approx(2.0 + 1.5 - 0.7, abs=1e-15)
        assert ret[0] == pytest.approx(adv[0] + 0.7, abs=1e-15)

    def test_lambda_zero_is_one_step_td(self, rng):
        rewards = rng.normal(0, 1, 10)
        values = rng.normal(0, 1, 10)
        dones = np.zeros(10, dtype=bool)
        adv, _ = gae(rewards, values, dones, 0.3, 0.99, 0.0)
        vnext = np.concatenate([values[1:], [0.3]])
        deltas = rewards + 0.99 * vnext - values
        assert np.allclose(adv, deltas, atol=1e-15)

    def test_matches_double_sum_oracle(self, rng):
        for _ in range(200):
            t_len = int(rng.integers(1, 25))
            rewards = rng.normal(0, 1, t_len)
            values = rng.normal(0, 1, t_len)
            dones = rng.random(t_len) < 0.2
            bootstrap = float(rng.normal())
            gamma = float(rng.uniform(0.8, 1.0))
            lam = float(rng.uniform(0.0, 1.0))
            adv, ret = gae(rewards, values, dones, bootstrap, gamma, lam)
            oadv, oret = brute_force_gae(rewards, values, dones.astype(float),
                                         bootstrap, gamma, lam)
            assert np.abs(adv - oadv).max() < 1e-10
            assert np.abs(ret - oret).max() < 1e-10

    def test_batched_matches_per_stream(self, rng):
        rewards = rng.normal(0, 1, (4, 15))
        values = rng.normal(0, 1, (4, 15))
        dones = rng.random((4, 15)) < 0.15
        bootstrap = rng.normal(0, 1, 4)
        badv, bret = gae(rewards, values, dones, bootstrap, 0.99, 0.95)
        for e in range(4):
            sadv, sret = gae(rewards[e], values[e], dones[e], bootstrap[e], 0.99, 0.95)
            assert np.array_equal(badv[e], sadv)
            assert np.array_equal(bret[e], sret)


class TestAdaptBeta:
    def test_on_target_unchanged(self):
        assert adapt_beta(0.01, 0.01, 1.0) == 1.0

    def test_overshoot_doubles(self):
        assert adapt_beta(0.02, 0.01, 1.0) == 2.0

    def test_undershoot_halves(self):
        assert adapt_beta(0.001, 0.01, 1.0) == 0.5

    def test_clamped_at_bounds(self):
        assert adapt_beta(10.0, 0.01, 10.0) == 10.0
        assert adapt_beta(0.0, 0.01, 1e-4) == 1e-4


def make_batch(net, rng, b=6, ratios=None):
    images = rng.normal(0, 1, (b, net.m, net.n, net.n))
    vecs = rng.normal(0, 1, (b, net.vec_dim))
    mean, value, _ = net.forward(images, vecs)
    log_std = net.params["log_std"]
    actions = np.stack([sample_action(mean[i], log_std, rng)[0] for i in range(b)])
    z = (actions - mean) / np.exp(log_std)
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) \
        - 0.5 * np.log(2 * np.pi) * net.action_dim
    if ratios is None:
        ratios = np.ones(b)
    return {
        "images": images, "vecs": vecs, "actions": actions,
        "logp_old": logp - np.log(ratios),
        "mean_old": mean.copy(), "log_std_old": log_std.copy(),
        "advantages": rng.normal(0, 1, b), "returns": rng.normal(0, 1, b),
    }


class TestPPOLoss:
    def setup_method(self):
        self.net = PolicyNetwork(n=8, m=1, vec_dim=3, action_dim=2, seed=7)

    def test_identity_at_old_policy(self, rng):
        batch = make_batch(self.net, rng)
        batch["returns"] = None
        # make the value term exact zero so only surrogate and KL remain
        mean, value, _ = self.net.forward(batch["images"], batch["vecs"])
        batch["returns"] = value.copy()
        loss, diag, _ = ppo_loss(self.net, batch, eps=0.2, beta=3.7, value_coef=0.5)
        assert abs(diag["kl"]) <= 1e-12
        assert abs(diag["surrogate"] - (-batch["advantages"].mean())) <= 1e-12
        assert abs(diag["value_loss"]) <= 1e-24

    def test_clip_case_positive_advantage(self, rng):
        # single sample, ratio 1.5, eps 0.2, A=1 -> objective min(1.5, 1.2) = 1.2
        batch = make_batch(self.net, rng, b=1, ratios=np.array([1.5]))
        batch["advantages"] = np.array([1.0])
        mean, value, _ = self.net.forward(batch["images"], batch["vecs"])
        batch["returns"] = value.copy()
        loss, diag, _ = ppo_loss(self.net, batch, eps=0.2, beta=0.0, value_coef=0.0)
        assert diag["surrogate"] == pytest.approx(-1.2, abs=1e-12)

    def test_clip_case_negative_advantage(self, rng):
        # ratio 0.5, A=-1 -> objective min(-0.5, -0.8) = -0.8
        batch = make_batch(self.net, rng, b=1, ratios=np.array([0.5]))
        batch["advantages"] = np.array([-1.0])
        mean, value, _ = self.net.forward(batch["images"], batch["vecs"])
        batch["returns"] = value.copy()
        loss, diag, _ = ppo_loss(self.net, batch, eps=0.2, beta=0.0, value_coef=0.0)
        assert diag["surrogate"] == pytest.approx(0.8, abs=1e-12)

    def test_non_finite_ratio_identifies_sample(self, rng):
        batch = make_batch(self.net, rng, b=4)
        batch["logp_old"][2] = -np.inf
        with pytest.raises(AmorphError, match="sample 2"):
            ppo_loss(self.net, batch, eps=0.2, beta=1.0, value_coef=0.5)

    def test_gradients_match_finite_differences(self, rng):
        # ratios away from the clip kinks so central differences are smooth
        ratios = np.array([0.9, 1.05, 0.6, 1.4, 1.0, 0.95])
        batch = make_batch(self.net, rng, b=6, ratios=ratios)
        eps_clip, beta, vc = 0.2, 0.7, 0.5

        loss0, _, grads = ppo_loss(self.net, batch, eps_clip, beta, vc)
        eps = 1e-5
        for name, grad in grads.items():
            flat_p = self.net.params[name].reshape(-1)
            flat_g = grad.reshape(-1)
            stride = max(1, flat_p.size // 40)  # spot-check large tensors
            for k in range(0, flat_p.size, stride):
                orig = flat_p[k]
                flat_p[k] = orig + eps
                lp, _, _ = ppo_loss(self.net, batch, eps_clip, beta, vc,
                                    compute_grads=False)
                flat_p[k] = orig - eps
                lm, _, _ = ppo_loss(self.net, batch, eps_clip, beta, vc,
                                    compute_grads=False)
                flat_p[k] = orig
                fd = (lp - lm) / (2 * eps)
                scale = max(abs(fd), abs(flat_g[k]), 1e-8)
                assert abs(fd - flat_g[k]) <= 1e-4 * scale, \
                    f"{name}[{k}]: fd={fd} analytic={flat_g[k]}"


class TestAdam:
    def test_converges_on_quadratic(self):
        params = {"x": np.array([5.0, -3.0])}
        opt = Adam(params, lr=0.1)
        for _ in range(500):
            opt.step(params, {"x": 2.0 * params["x"]})
        assert np.abs(params["x"]).max() < 1e-3

    def test_deterministic(self):
        def run():
            params = {"a": np.array([1.0]), "b": np.array([2.0])}
            opt = Adam(params, lr=0.01)
            for k in range(50):
                opt.step(params, {"a": params["a"] * 0.3, "b": np.cos(params["b"])})
            return params
        p1, p2 = run(), run()
        assert np.array_equal(p1["a"], p2["a"]) and np.array_equal(p1["b"], p2["b"])


def build_rollout_fixture(seed=0, n_envs=2, steps=12):
    task = tiny_task()
    envs = [ManipulationEnv(task, seed=1000 + k) for k in range(n_envs)]
    obs = [e.reset() for e in envs]
    probe = obs[0]
    net = PolicyNetwork(n=32, m=2, vec_dim=probe.vector().shape[0], action_dim=3,
                        seed=seed)
    rngs = [np.random.default_rng(2000 + k) for k in range(n_envs)]
    return net, envs, rngs, obs


class TestCollectRollouts:
    def test_sample_count(self):
        net, envs, rngs, obs = build_rollout_fixture()
        batch, _, _ = collect_rollouts(net, envs, rngs, obs, steps_per_env=12)
        assert batch["rewards"].shape == (2, 12)
        assert batch["images"].shape[:2] == (2, 12)
        # paper-scale default: 49 envs x 1000 steps = 49,000 samples
        cfg = TrainConfig()
        assert cfg.n_envs * cfg.steps_per_env == 49_000

    def test_determinism(self):
        a = collect_rollouts(*build_rollout_fixture(), steps_per_env=10)[0]
        b = collect_rollouts(*build_rollout_fixture(), steps_per_env=10)[0]
        for key in ("rewards", "actions", "logp_old", "values_old"):
            assert np.array_equal(a[key], b[key])

    def test_single_env_matches_manual_loop(self):
        net, envs, rngs, obs = build_rollout_fixture(n_envs=1)
        batch, _, _ = collect_rollouts(net, [envs[0]], [rngs[0]], [obs[0]],
                                       steps_per_env=8)
        # replay manually with identical streams
        env = ManipulationEnv(tiny_task(), seed=1000)
        ob = env.reset()
        rng = np.random.default_rng(2000)
        for t in range(8):
            mean, _, _ = net.forward(ob.images[None], ob.vector()[None])
            act, logp = sample_action(mean[0], net.params["log_std"], rng)
            assert np.array_equal(act, batch["actions"][0, t])
            result = env.step(act)
            assert result.reward == batch["rewards"][0, t]
            ob = result.observation if not result.done else env.reset()

    def test_episode_boundaries_marked(self):
        net, envs, rngs, obs = build_rollout_fixture()
        batch, _, completed = collect_rollouts(net, envs, rngs, obs, steps_per_env=12)
        # horizon 6 divides 12: every env completes exactly 2 episodes
        assert len(completed) == 4
        assert np.array_equal(batch["dones"].sum(axis=1), [2, 2])


class TestTrainer:
    def test_every_sample_used_epochs_times(self, monkeypatch):
        import amorph.ppo as ppo_module
        seen = []
        real = ppo_module.ppo_loss

        def spy(net, mb, *args, **kw):
            seen.append(np.asarray(mb["returns"]).copy())
            return real(net, mb, *args, **kw)

        monkeypatch.setattr(ppo_module, "ppo_loss", spy)
        trainer = Trainer(tiny_task(), None, tiny_train(iterations=1), seed=5)
        trainer.run_iteration()
        used = np.concatenate(seen)
        total = tiny_train().n_envs * tiny_train().steps_per_env
        assert used.size == total * tiny_train().epochs
        # each sample's return value appears exactly `epochs` times
        _, counts = np.unique(np.round(used, 12), return_counts=True)
        assert np.all(counts % tiny_train().epochs == 0)

    def test_two_runs_bit_identical(self):
        def run():
            trainer = Trainer(tiny_task(), None, tiny_train(), seed=9)
            reports = [trainer.run_iteration() for _ in range(2)]
            return trainer, reports
        t1, r1 = run()
        t2, r2 = run()
        for name in t1.net.params:
            assert np.array_equal(t1.net.params[name], t2.net.params[name]), name
        assert [r.to_json() for r in r1] == [r.to_json() for r in r2]

    def test_resume_bit_exact(self, tmp_path):
        t1 = Trainer(tiny_task(), None, tiny_train(iterations=3), seed=4)
        t1.run_iteration()
        t1.run_iteration()
        state = tmp_path / "state.ckpt"
        t1.save_state(state)
        r_direct = t1.run_iteration()

        t2 = Trainer(tiny_task(), None, tiny_train(iterations=3), seed=4)
        t2.load_state(state)
        r_resumed = t2.run_iteration()
        assert r_direct.to_json() == r_resumed.to_json()
        for name in t1.net.params:
            assert np.array_equal(t1.net.params[name], t2.net.params[name]), name

    def test_log_std_clamped(self):
        trainer = Trainer(tiny_task(), None, tiny_train(iterations=1, lr=10.0), seed=2)
        trainer.run_iteration()
        ls = trainer.net.params["log_std"]
        assert np.all(ls >= -5.0) and np.all(ls <= 2.0)

    def test_curriculum_advances_on_constant_threshold(self):
        task = tiny_task()
        task.curriculum_enabled = True
        task.curriculum_threshold = -1e9  # any return clears it
        trainer = Trainer(task, None, tiny_train(iterations=2), seed=3)
        assert trainer.curriculum_level == 1
        trainer.run_iteration()
        assert trainer.curriculum_level == 2
