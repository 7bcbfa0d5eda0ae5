from collections import Counter

import numpy as np
import pytest

from forgetlab.dynamics import (
    DEFAULT_TARGET,
    FULL_MIXTURE,
    bimodal_config,
    forward_kl_gradient,
    forward_kl_step,
    grad_log_density,
    mode_overlaps,
    recompute_checkpoint,
    reverse_kl_gradient,
    reverse_kl_step,
    reverse_target_log_density,
    run_bimodal,
    run_distance_sweep,
    run_unimodal,
    unimodal_config,
    with_distance,
)
from forgetlab.errors import DomainError, NumericFailure
from forgetlab.mixture import (
    DEFAULT_GRID,
    GaussianComponent,
    GaussianMixture,
    cross_entropy_grid,
    density,
    kl_grid,
    log_density,
    sample,
)

P_NEW = GaussianComponent(3.5, 0.7)


def fd_gradient(m: GaussianMixture, y: float, h: float = 1e-5) -> np.ndarray:
    """Central differences of log pi(y) over (all logits, means, log-stds)."""
    parts = [m.logits, m.means, m.log_stds]
    out = []
    for k, base in enumerate(parts):
        for i in range(base.size):
            vals = []
            for sign in (1, -1):
                arrs = [p.copy() for p in parts]
                arrs[k][i] += sign * h
                vals.append(log_density(GaussianMixture(*arrs), y))
            out.append((vals[0] - vals[1]) / (2 * h))
    return np.array(out)


def random_mixture(rng, k):
    w = rng.dirichlet(np.ones(k))
    comps = [(rng.uniform(-4, 4), rng.uniform(0.5, 2.0)) for _ in range(k)]
    return GaussianMixture.from_components(w, comps)


class TestGradLogDensity:
    def test_peak(self):
        g = grad_log_density(GaussianMixture.single(0, 1), 0.0)
        assert g.means[0] == 0.0 and g.log_stds[0] == -1.0 and g.logits[0] == 0.0

    def test_one_sigma(self):
        g = grad_log_density(GaussianMixture.single(0, 1), 1.0)
        assert g.means[0] == 1.0 and g.log_stds[0] == 0.0

    @pytest.mark.parametrize("k", [2, 3])
    def test_finite_differences(self, k):
        rng = np.random.default_rng(10 + k)
        for _ in range(20):
            m = random_mixture(rng, k)
            y = rng.uniform(-5, 5)
            g = grad_log_density(m, y)
            analytic = np.concatenate([g.logits, g.means, g.log_stds])
            np.testing.assert_allclose(analytic, fd_gradient(m, y), rtol=1e-5, atol=1e-8)

    def test_vectorized_matches_scalar(self):
        m = random_mixture(np.random.default_rng(0), 2)
        ys = np.array([-2.0, 0.3, 4.1])
        batch = grad_log_density(m, ys).vector()
        for j, y in enumerate(ys):
            np.testing.assert_array_equal(batch[:, j], grad_log_density(m, y).vector())

    @pytest.mark.parametrize("m", [GaussianMixture.single(0.5, 1.3), DEFAULT_TARGET])
    def test_score_identity(self, m):
        n = 100_000
        y = sample(m, np.random.default_rng(3), n)
        g = grad_log_density(m, y).vector()
        se = g.std(axis=1) / np.sqrt(n)
        assert np.all(np.abs(g.mean(axis=1)) < 4 * se)


class TestSteps:
    def test_forward_zero_lr(self):
        m = random_mixture(np.random.default_rng(1), 2)
        out = forward_kl_step(m, P_NEW, 100, 0.0, np.random.default_rng(0))
        for a in ("logits", "means", "log_stds"):
            assert np.array_equal(getattr(out, a), getattr(m, a))

    def test_reverse_zero_lr(self):
        m = random_mixture(np.random.default_rng(2), 2)
        out = reverse_kl_step(m, P_NEW.log_pdf, 100, 0.0, np.random.default_rng(0))
        for a in ("logits", "means", "log_stds"):
            assert np.array_equal(getattr(out, a), getattr(m, a))

    def test_forward_stationary_at_target(self):
        m = GaussianMixture.single(3.5, 0.7)
        rng = np.random.default_rng(4)
        for _ in range(50):
            m = forward_kl_step(m, P_NEW, 1000, 0.05, rng)
            assert abs(m.means[0] - 3.5) < 0.1

    def test_reverse_stationary_at_target(self):
        rng = np.random.default_rng(5)
        grads = []
        for _ in range(100):
            y = sample(DEFAULT_TARGET, rng, 1000)
            grads.append(reverse_kl_gradient(DEFAULT_TARGET, log_density(DEFAULT_TARGET, y), y))
        grads = np.array(grads)
        se = grads.std(axis=0, ddof=1) / np.sqrt(len(grads))
        assert np.all(np.abs(grads.mean(axis=0)) <= 3 * se)

    def test_forward_gradient_is_mean_negative_score(self):
        m = random_mixture(np.random.default_rng(6), 2)
        y = np.array([0.1, 2.0, 3.3])
        expected = -np.mean([grad_log_density(m, v).vector() for v in y], axis=0)
        np.testing.assert_allclose(forward_kl_gradient(m, y), expected, rtol=1e-14)

    def test_reverse_clip_counter(self):
        m = GaussianMixture.single(0, 1)
        c = Counter()
        never = lambda y: np.full(np.shape(y), -np.inf)
        out = reverse_kl_step(m, never, 50, 0.01, np.random.default_rng(0), c)
        assert c["target_clip"] == 50
        assert np.all(np.isfinite(out.means))

    @pytest.mark.parametrize("n,lr", [(0, 0.1), (10, -0.1)])
    def test_step_domain(self, n, lr):
        with pytest.raises(DomainError):
            forward_kl_step(GaussianMixture.single(0, 1), P_NEW, n, lr, np.random.default_rng(0))

    def test_overflowing_update_is_numeric_failure(self):
        with pytest.raises(NumericFailure):
            forward_kl_step(GaussianMixture.single(0, 1), P_NEW, 10, 1e308, np.random.default_rng(0))


class TestRuns:
    def test_zero_steps(self):
        traj = run_unimodal(unimodal_config("forward_kl", max_steps=0))
        assert len(traj.checkpoints) == 1
        assert traj.gain == 0 and traj.drop == 0

    def test_checkpoint_cadence(self):
        traj = run_bimodal(bimodal_config("forward_kl", 0.01, max_steps=250, gain_stop=2.0))
        assert [c.step for c in traj.checkpoints] == [0, 100, 200, 250]
        assert traj.stop_reason == "max_steps"

    def test_stops_at_gain(self):
        traj = run_unimodal(unimodal_config("reverse_kl", seed=1))
        assert traj.stop_reason == "gain_stop" and traj.gain >= 0.9
        assert traj.final.step % 100 == 0

    def test_determinism(self):
        a = run_bimodal(bimodal_config("reverse_kl", seed=3, max_steps=200))
        b = run_bimodal(bimodal_config("reverse_kl", seed=3, max_steps=200))
        assert len(a.checkpoints) == len(b.checkpoints)
        for x, y in zip(a.checkpoints, b.checkpoints):
            assert x.step == y.step and x.gain == y.gain and x.drop == y.drop
            assert np.array_equal(x.means, y.means) and np.array_equal(x.log_stds, y.log_stds)

    @pytest.mark.parametrize("make", [lambda: unimodal_config("forward_kl"), lambda: bimodal_config("reverse_kl")])
    def test_checkpoint_self_consistency(self, make):
        cfg = make()
        traj = run_unimodal(cfg) if cfg.policy_init.n_components == 1 else run_bimodal(cfg)
        first = traj.checkpoints[0]
        for ck in traj.checkpoints:
            again = recompute_checkpoint(ck, first, cfg)
            assert abs(again.gain - ck.gain) <= 1e-12 and abs(again.drop - ck.drop) <= 1e-12

    def test_density_snapshot(self):
        traj = run_unimodal(unimodal_config("forward_kl", max_steps=100), keep_density=True)
        d = traj.final.density
        assert d.shape == DEFAULT_GRID.points.shape
        np.testing.assert_array_equal(d, density(traj.final.policy, DEFAULT_GRID.points))

    def test_wrong_policy_shape(self):
        with pytest.raises(DomainError):
            run_unimodal(bimodal_config("forward_kl"))
        with pytest.raises(DomainError):
            run_bimodal(unimodal_config("forward_kl"))

    def test_numeric_failure_carries_last_good(self):
        cfg = unimodal_config("forward_kl", learning_rate=1e308)
        with pytest.raises(NumericFailure) as info:
            run_unimodal(cfg)
        assert info.value.last_good is not None and info.value.last_good.step == 0

    def test_full_mixture_target(self):
        cfg = bimodal_config("reverse_kl", reverse_target=FULL_MIXTURE, max_steps=100)
        log_t = reverse_target_log_density(cfg)
        y = np.array([-3.0, 3.5])
        np.testing.assert_allclose(log_t(y), log_density(DEFAULT_TARGET, y))
        traj = run_bimodal(cfg)
        assert traj.final.step == 100

    def test_config_validation(self):
        with pytest.raises(DomainError):
            unimodal_config("sideways_kl")
        with pytest.raises(DomainError):
            unimodal_config("forward_kl", learning_rate=-0.05)
        with pytest.raises(DomainError):
            unimodal_config("forward_kl", target=GaussianMixture.single(0, 1))


def _grid_objective(cfg, policy):
    pts = cfg.grid.points
    pol = density(policy, pts)
    if cfg.objective == "forward_kl":
        return cross_entropy_grid(cfg.new_mode.pdf(pts), pol, cfg.grid)
    return kl_grid(pol, np.exp(reverse_target_log_density(cfg)(pts)), cfg.grid)


@pytest.mark.parametrize(
    "make",
    [
        lambda: unimodal_config("forward_kl", eval_every=10, max_steps=100, gain_stop=2.0),
        lambda: unimodal_config("reverse_kl", eval_every=10, max_steps=100, gain_stop=2.0),
        lambda: bimodal_config("forward_kl", 0.01, eval_every=10, max_steps=100, gain_stop=2.0),
        lambda: bimodal_config("reverse_kl", eval_every=10, max_steps=100, gain_stop=2.0),
    ],
)
def test_objective_nonincreasing(make):
    cfg = make()
    traj = run_unimodal(cfg) if cfg.policy_init.n_components == 1 else run_bimodal(cfg)
    obj = [_grid_objective(cfg, ck.policy) for ck in traj.checkpoints]
    assert len(obj) == 11
    assert all(b <= a + 0.05 for a, b in zip(obj, obj[1:]))


class TestSweep:
    def test_zero_distance_is_already_learned(self):
        [(d, traj)] = run_distance_sweep(bimodal_config("reverse_kl"), [0.0])
        assert d == 0.0
        assert traj.config.new_mode.mean == 0.5
        assert traj.stop_reason == "already_learned"
        assert len(traj.checkpoints) == 1 and traj.checkpoints[0].s_new >= 0.9

    def test_default_distance_matches_bimodal(self):
        cfg = bimodal_config("reverse_kl", seed=2)
        [(_, swept)] = run_distance_sweep(cfg, [3.0])
        direct = run_bimodal(cfg)
        assert [c.step for c in swept.checkpoints] == [c.step for c in direct.checkpoints]
        for a, b in zip(swept.checkpoints, direct.checkpoints):
            assert a.gain == b.gain and a.drop == b.drop and np.array_equal(a.means, b.means)

    def test_repositions_target(self):
        cfg = with_distance(bimodal_config("reverse_kl"), 5.0)
        assert cfg.new_mode.mean == pytest.approx(5.5) and cfg.new_mode.std == 0.7
        assert cfg.old_weight == 0.75

    def test_objectives_and_validation(self):
        out = run_distance_sweep(bimodal_config("reverse_kl", max_steps=100), [4.0], ["forward_kl", "reverse_kl"])
        assert [t.config.objective for _, t in out] == ["forward_kl", "reverse_kl"]
        with pytest.raises(DomainError):
            run_distance_sweep(bimodal_config("reverse_kl"), [])
        with pytest.raises(DomainError):
            with_distance(bimodal_config("reverse_kl"), -1.0)


def test_mode_overlaps_at_init():
    cfg = bimodal_config("forward_kl")
    s_old, s_new, warn = mode_overlaps(cfg.policy_init, cfg)
    assert 0 < s_new < 0.1 < 0.8 < s_old <= 1 and not warn
