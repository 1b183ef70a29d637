import numpy as np
import pytest

from opstab import attacks as atk
from opstab import autodiff as ad
from opstab import deeponet as dn
from opstab import problems as pb


def tiny_model(seed=0, m=12, transform="none"):
    arch = dn.ArchSpec((m, 16, 16), (1, 16, 16), transform=transform)
    return dn.glorot_init(arch, seed)


class TestConfig:
    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError):
            atk.AttackConfig(epsilon=-0.1)

    def test_bad_norm_rejected(self):
        with pytest.raises(ValueError):
            atk.AttackConfig(epsilon=0.1, norm="l1")

    def test_nonpositive_alpha_rejected_when_attacking(self):
        with pytest.raises(ValueError):
            atk.AttackConfig(epsilon=0.1, step_alpha=0.0, n_iter=5)

    def test_resolve_relative(self):
        cfg = atk.AttackConfig(epsilon=0.1, relative=True)
        resolved = cfg.resolve_for(np.array([0.5, -2.0, 1.0]))
        assert resolved.epsilon == pytest.approx(0.2)
        assert resolved.step_alpha == pytest.approx(0.05)
        assert resolved.relative is False

    def test_resolve_absolute_default_alpha(self):
        cfg = atk.AttackConfig(epsilon=0.4)
        resolved = cfg.resolve_for(np.zeros(3))
        assert resolved.epsilon == 0.4
        assert resolved.step_alpha == 0.1


class TestProject:
    def test_inside_ball_unchanged(self):
        cfg = atk.AttackConfig(epsilon=1.0, n_iter=0)
        f = np.zeros(4)
        f_tilde = np.array([0.5, -0.2, 0.0, 0.9])
        assert np.array_equal(atk.project(f_tilde, f, cfg), f_tilde)

    def test_linf_clip_example(self):
        cfg = atk.AttackConfig(epsilon=0.1, n_iter=0)
        out = atk.project(np.array([0.5, -0.05]), np.zeros(2), cfg)
        assert np.array_equal(out, [0.1, -0.05])

    def test_l2_rescale_example(self):
        cfg = atk.AttackConfig(epsilon=1.0, norm="l2", n_iter=0)
        out = atk.project(np.array([3.0, 4.0]), np.zeros(2), cfg)
        assert np.allclose(out, [0.6, 0.8], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("norm", ["linf", "l2"])
    def test_idempotent(self, norm):
        cfg = atk.AttackConfig(epsilon=0.3, norm=norm, n_iter=0)
        rng = np.random.default_rng(0)
        f = rng.standard_normal(10)
        once = atk.project(f + rng.standard_normal(10), f, cfg)
        twice = atk.project(once, f, cfg)
        assert np.array_equal(once, twice)

    @pytest.mark.parametrize("norm", ["linf", "l2"])
    @pytest.mark.parametrize("seed", range(20))
    def test_non_expansive(self, norm, seed):
        cfg = atk.AttackConfig(epsilon=0.5, norm=norm, n_iter=0)
        rng = np.random.default_rng(seed)
        f = rng.standard_normal(8)
        a = f + rng.standard_normal(8)
        b = f + rng.standard_normal(8)
        pa, pb_ = atk.project(a, f, cfg), atk.project(b, f, cfg)
        if norm == "linf":
            assert np.abs(pa - pb_).max() <= np.abs(a - b).max() + 1e-12
        else:
            assert np.linalg.norm(pa - pb_) <= np.linalg.norm(a - b) + 1e-12


class TestFgsm:
    def _setup(self):
        prob = pb.default_problem("poisson1d", sensor_count=12,
                                  collocation_counts=(10, 2, 0))
        params = tiny_model(m=12)
        colloc = pb.make_collocation(prob)
        f = np.random.default_rng(1).standard_normal(12)
        return prob, params, colloc, f

    def test_zero_epsilon_identity(self):
        prob, params, colloc, f = self._setup()
        assert np.array_equal(atk.fgsm(params, prob, f, colloc, 0.0), f)

    def test_linf_bound_holds(self):
        prob, params, colloc, f = self._setup()
        out = atk.fgsm(params, prob, f, colloc, 0.25)
        assert np.abs(out - f).max() <= 0.25 + 1e-15

    def test_equals_single_step_pgd_without_warm_start(self):
        prob, params, colloc, f = self._setup()
        eps = 0.2
        fg = atk.fgsm(params, prob, f, colloc, eps)
        cfg = atk.AttackConfig(epsilon=eps, step_alpha=eps, n_iter=1,
                               warm_start=False)
        pgd, _ = atk.attack_physics_loss(params, prob, f, colloc, cfg)
        assert np.allclose(fg, pgd, rtol=0, atol=1e-15)


class TestPhysicsAttack:
    def _setup(self):
        prob = pb.default_problem("poisson1d", sensor_count=12,
                                  collocation_counts=(10, 2, 0))
        params = tiny_model(m=12)
        colloc = pb.make_collocation(prob)
        f = np.random.default_rng(2).standard_normal(12)
        return prob, params, colloc, f

    def test_zero_epsilon_returns_input_bit_exactly(self):
        prob, params, colloc, f = self._setup()
        cfg = atk.AttackConfig(epsilon=0.0, n_iter=20)
        out, trace = atk.attack_physics_loss(params, prob, f, colloc, cfg)
        assert np.array_equal(out, f)
        assert trace.final_perturbation_norm == 0.0

    def test_zero_iterations_without_warm_start(self):
        prob, params, colloc, f = self._setup()
        cfg = atk.AttackConfig(epsilon=0.3, n_iter=0, warm_start=False)
        out, trace = atk.attack_physics_loss(params, prob, f, colloc, cfg)
        assert np.array_equal(out, f)
        assert len(trace.loss_per_iter) == 0

    @pytest.mark.parametrize("norm", ["linf", "l2"])
    def test_ball_constraint_within_tolerance(self, norm):
        prob, params, colloc, f = self._setup()
        cfg = atk.AttackConfig(epsilon=0.2, n_iter=8, norm=norm)
        out, trace = atk.attack_physics_loss(params, prob, f, colloc, cfg,
                                             seed=3)
        assert atk.perturbation_norm(out, f, cfg) <= 0.2 + 1e-12
        assert trace.final_perturbation_norm <= 0.2 + 1e-12

    def test_trace_length_matches_iterations(self):
        prob, params, colloc, f = self._setup()
        cfg = atk.AttackConfig(epsilon=0.2, n_iter=7)
        _, trace = atk.attack_physics_loss(params, prob, f, colloc, cfg)
        assert len(trace.loss_per_iter) == 7

    def test_deterministic_given_seed(self):
        prob, params, colloc, f = self._setup()
        cfg = atk.AttackConfig(epsilon=0.2, n_iter=5)
        a, _ = atk.attack_physics_loss(params, prob, f, colloc, cfg, seed=9)
        b, _ = atk.attack_physics_loss(params, prob, f, colloc, cfg, seed=9)
        c, _ = atk.attack_physics_loss(params, prob, f, colloc, cfg, seed=10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_batched_matches_per_sample_linf(self):
        # samples decouple: joint ascent equals row-by-row attacks
        prob, params, colloc, _ = self._setup()
        rows = np.random.default_rng(5).standard_normal((3, 12))
        cfg = atk.AttackConfig(epsilon=0.15, n_iter=6, warm_start=True)
        batched, _ = atk.attack_physics_loss_batch(
            params, prob, rows, colloc, [cfg], seeds=[11, 12, 13])
        for i in range(3):
            solo, _ = atk.attack_physics_loss(params, prob, rows[i], colloc,
                                              cfg, seed=11 + i)
            assert np.allclose(batched[i], solo, rtol=0, atol=1e-12)


class TestSolutionErrorAttack:
    def test_zero_epsilon_identity(self):
        params = tiny_model()
        f = np.random.default_rng(0).standard_normal(12)
        grid = np.linspace(0, 1, 9)
        u_true = dn.forward(params, f, grid)
        cfg = atk.AttackConfig(epsilon=0.0, n_iter=5)
        out, _ = atk.attack_solution_error(params, f, u_true, grid, cfg)
        assert np.array_equal(out, f)

    def test_perfect_model_stays_at_zero_loss(self):
        # model output constant in f and equal to the reference
        grid = np.linspace(0, 1, 6)
        u_true = np.sin(np.pi * grid)

        def perfect(f_var, y):
            return u_true[None, :]

        f = np.random.default_rng(1).standard_normal(8)
        cfg = atk.AttackConfig(epsilon=0.5, n_iter=6)
        out, trace = atk.attack_solution_error(perfect, f, u_true, grid, cfg)
        assert trace.loss_per_iter[0] == 0.0
        assert trace.loss_per_iter[-1] == trace.loss_per_iter[0]

    def test_no_warm_start_first_loss_is_clean_loss(self):
        params = tiny_model(seed=4)
        f = np.random.default_rng(2).standard_normal(12)
        grid = np.linspace(0, 1, 9)
        u_true = np.cos(grid)
        cfg = atk.AttackConfig(epsilon=0.3, n_iter=4, warm_start=True)
        _, trace = atk.attack_solution_error(params, f, u_true, grid, cfg)
        clean = float(np.sum((dn.forward(params, f, grid) - u_true) ** 2))
        assert trace.loss_per_iter[0] == pytest.approx(clean, rel=1e-12)

    def test_ball_constraint(self):
        params = tiny_model(seed=5)
        f = np.random.default_rng(3).standard_normal(12)
        grid = np.linspace(0, 1, 9)
        u_true = np.cos(grid)
        cfg = atk.AttackConfig(epsilon=0.1, n_iter=10)
        out, _ = atk.attack_solution_error(params, f, u_true, grid, cfg)
        assert np.abs(out - f).max() <= 0.1 + 1e-12


class TestAscentOnTrainedModel:
    def test_physics_attack_raises_loss_on_most_samples(
            self, trained_poisson_baseline):
        prob, params = trained_poisson_baseline
        colloc = pb.make_collocation(prob)
        cfg = atk.AttackConfig(epsilon=0.1, relative=True, n_iter=20)
        wins = 0
        n = 40
        for i in range(n):
            f = pb.sample_input(prob, 5_000_000 + i)
            _, trace = atk.attack_physics_loss(params, prob, f.values, colloc,
                                               cfg, seed=i)
            final = trace.loss_per_iter[-1]
            first = trace.loss_per_iter[0]
            if final >= first:
                wins += 1
        assert wins >= 0.9 * n
