"""Losses, penalty regimes, the Wasserstein estimator, and the training loop."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wganlab.data import EightGaussians, FixedSetSampler, LatentSampler
from wganlab.gan import (
    CriticRegime,
    FixedFake,
    LearnedGenerator,
    TrainConfig,
    TrainDiverged,
    critic_loss,
    estimate_wasserstein,
    fixed_noisy_generator,
    format_metrics_csv,
    generator_loss,
    interpolate_samples,
    train,
)
from wganlab.nn import Mlp, MlpSpec, ParamSet
from wganlab.tape import Tape


def linear_critic(w, b=0.0):
    """A 2-input critic whose input gradient is the constant vector w."""
    model = Mlp(MlpSpec((2, 1)))
    params = ParamSet({"w0": np.array([w]), "b0": np.array([b])})
    return model, params


class TestInterpolate:
    def test_endpoints(self):
        real = np.array([[1.0, 2.0], [3.0, 4.0]])
        fake = np.array([[-1.0, 0.0], [0.0, 0.0]])
        assert np.array_equal(interpolate_samples(real, fake, np.array([1.0, 1.0])), real)
        assert np.array_equal(interpolate_samples(real, fake, np.array([0.0, 0.0])), fake)

    def test_per_example_mixing(self):
        real = np.ones((2, 2))
        fake = np.zeros((2, 2))
        out = interpolate_samples(real, fake, np.array([0.25, 0.75]))
        assert np.allclose(out, [[0.25, 0.25], [0.75, 0.75]])

    def test_broadcasts_over_trailing_axes(self):
        real = np.ones((2, 3, 4))
        fake = np.zeros((2, 3, 4))
        out = interpolate_samples(real, fake, np.array([0.5, 1.0]))
        assert np.allclose(out[0], 0.5) and np.allclose(out[1], 1.0)

    def test_validation(self):
        real = np.ones((2, 2))
        with pytest.raises(ValueError, match="shape"):
            interpolate_samples(real, np.ones((3, 2)), np.array([0.5, 0.5]))
        with pytest.raises(ValueError, match="eps"):
            interpolate_samples(real, real, np.array([0.5]))
        with pytest.raises(ValueError, match="0, 1"):
            interpolate_samples(real, real, np.array([0.5, 1.5]))

    @given(st.lists(st.floats(min_value=0, max_value=1), min_size=3, max_size=3))
    def test_stays_in_coordinate_envelope(self, eps):
        rng = np.random.default_rng(0)
        real = rng.standard_normal((3, 2))
        fake = rng.standard_normal((3, 2))
        out = interpolate_samples(real, fake, np.array(eps))
        lo = np.minimum(real, fake) - 1e-12
        hi = np.maximum(real, fake) + 1e-12
        assert (out >= lo).all() and (out <= hi).all()


class TestCriticLoss:
    def test_gradient_penalty_linear_oracle(self):
        # d D/dx = (3,4) everywhere, norm 5: penalty 10*(5-1)^2 = 160.
        model, params = linear_critic([3.0, 4.0])
        t = Tape()
        nodes = params.to_consts(t)
        x_real = np.array([[1.0, 0.0]])  # D = 3
        x_fake = np.array([[0.0, 1.0]])  # D = 4
        xhat = np.array([[0.0, 0.0], [1.0, 1.0]])
        loss, info = critic_loss(
            t, CriticRegime("gp", penalty_lambda=10.0), model, nodes,
            x_real, x_fake, xhat=xhat,
        )
        assert info.mean_real == pytest.approx(3.0, abs=1e-12)
        assert info.mean_fake == pytest.approx(4.0, abs=1e-12)
        assert info.w_estimate == pytest.approx(-1.0, abs=1e-12)
        assert info.gp_mean_norm == pytest.approx(5.0, abs=1e-9)
        assert info.gp_msd == pytest.approx(16.0, abs=1e-8)
        assert float(loss.value) == pytest.approx(161.0, abs=1e-8)

    def test_one_sided_matches_two_sided_above_one(self):
        model, params = linear_critic([3.0, 4.0])
        xhat = np.array([[0.0, 0.0]])
        losses = {}
        for kind in ("gp", "gp1"):
            t = Tape()
            loss, _ = critic_loss(
                t, CriticRegime(kind), model, params.to_consts(t),
                np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), xhat=xhat,
            )
            losses[kind] = float(loss.value)
        assert losses["gp"] == pytest.approx(losses["gp1"], abs=1e-12)

    def test_one_sided_exactly_zero_below_one(self):
        # Norm 0.5 < 1: the hinge zeroes the penalty term bit for bit.
        model, params = linear_critic([0.3, 0.4])
        t = Tape()
        loss, info = critic_loss(
            t, CriticRegime("gp1"), model, params.to_consts(t),
            np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
            xhat=np.array([[2.0, -1.0]]),
        )
        assert info.loss == info.mean_fake - info.mean_real

    def test_two_sided_penalizes_below_one(self):
        model, params = linear_critic([0.3, 0.4])
        t = Tape()
        loss, info = critic_loss(
            t, CriticRegime("gp", penalty_lambda=10.0), model, params.to_consts(t),
            np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
            xhat=np.array([[2.0, -1.0]]),
        )
        penalty = info.loss - (info.mean_fake - info.mean_real)
        assert penalty == pytest.approx(10.0 * 0.25, abs=1e-7)

    def test_penalty_regimes_require_xhat(self):
        model, params = linear_critic([1.0, 0.0])
        t = Tape()
        with pytest.raises(ValueError, match="interpolated"):
            critic_loss(
                t, CriticRegime("gp"), model, params.to_consts(t),
                np.ones((1, 2)), np.zeros((1, 2)),
            )

    def test_clip_regime_is_plain_difference(self):
        model, params = linear_critic([3.0, 4.0])
        t = Tape()
        loss, info = critic_loss(
            t, CriticRegime("clip"), model, params.to_consts(t),
            np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
        )
        assert float(loss.value) == pytest.approx(1.0, abs=1e-12)
        assert math.isnan(info.gp_mean_norm)

    def test_clip_norm_stats_on_request(self):
        model, params = linear_critic([3.0, 4.0])
        t = Tape()
        _, info = critic_loss(
            t, CriticRegime("clip"), model, params.to_consts(t),
            np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]),
            xhat=np.array([[0.0, 0.0]]), want_norm_stats=True,
        )
        assert info.gp_mean_norm == pytest.approx(5.0, abs=1e-9)

    def test_standard_game_at_zero_critic(self):
        # Zero scores: both sigmoid probabilities are 1/2, loss is 2 ln 2.
        model = Mlp(MlpSpec((2, 1)))
        params = ParamSet({"w0": np.zeros((1, 2)), "b0": np.zeros(1)})
        t = Tape()
        loss, _ = critic_loss(
            t, CriticRegime("gan"), model, params.to_consts(t),
            np.ones((4, 2)), np.zeros((4, 2)),
        )
        assert float(loss.value) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_generator_losses_at_zero_critic(self):
        model = Mlp(MlpSpec((2, 1)))
        params = ParamSet({"w0": np.zeros((1, 2)), "b0": np.zeros(1)})
        t = Tape()
        nodes = params.to_consts(t)
        fake = t.const(np.ones((4, 2)))
        gan = generator_loss(t, CriticRegime("gan"), model, nodes, fake)
        assert float(gan.value) == pytest.approx(math.log(2), abs=1e-12)
        w = generator_loss(t, CriticRegime("gp"), model, nodes, fake)
        assert float(w.value) == pytest.approx(0.0, abs=1e-12)


class TestRegimeValidation:
    def test_kind_checked(self):
        with pytest.raises(ValueError, match="regime"):
            CriticRegime("wgan")

    def test_clip_threshold_checked(self):
        with pytest.raises(ValueError, match="positive"):
            CriticRegime("clip", clip_c=0.0)

    def test_config_checked(self):
        with pytest.raises(ValueError):
            TrainConfig(iters=-1)
        with pytest.raises(ValueError):
            TrainConfig(n_critic=0)
        with pytest.raises(ValueError, match="metric_eval_n"):
            TrainConfig(metric_eval_n=-1)

    def test_generator_rate_defaults_to_critic_rate(self):
        assert TrainConfig(alpha=3e-4).gen_alpha == pytest.approx(3e-4)
        assert TrainConfig(alpha=3e-4, alpha_gen=1e-5).gen_alpha == pytest.approx(1e-5)


class TestEstimator:
    def test_point_masses_identity_critic(self):
        model = Mlp(MlpSpec((1, 1)))
        params = ParamSet({"w0": np.array([[1.0]]), "b0": np.array([0.0])})
        real = FixedSetSampler(points=np.array([[3.0]]), seed=0)
        fake = FixedFake(FixedSetSampler(points=np.array([[0.0]]), seed=1))
        est = estimate_wasserstein(model, params, real, fake, n=10, batch=4)
        assert est == pytest.approx(3.0, abs=1e-12)

    def test_rejects_empty(self):
        model = Mlp(MlpSpec((1, 1)))
        params = model.init_params(0)
        real = FixedSetSampler(points=np.array([[0.0]]), seed=0)
        with pytest.raises(ValueError):
            estimate_wasserstein(model, params, real, FixedFake(real), n=0)


class TestFixedNoisy:
    def test_seeded_and_reproducible(self):
        base = FixedSetSampler(points=np.array([[1.0, 2.0]]), seed=0)
        a = fixed_noisy_generator(base, sigma=0.5, seed=9).sample_detached(5)
        base2 = FixedSetSampler(points=np.array([[1.0, 2.0]]), seed=0)
        b = fixed_noisy_generator(base2, sigma=0.5, seed=9).sample_detached(5)
        assert np.array_equal(a, b)
        assert not np.allclose(a, [[1.0, 2.0]])

    def test_zero_noise_returns_base_points(self):
        base = FixedSetSampler(points=np.array([[1.0, 2.0]]), seed=0)
        out = fixed_noisy_generator(base, sigma=0.0).sample_detached(3)
        assert np.array_equal(out, np.tile([[1.0, 2.0]], (3, 1)))

    def test_negative_noise_rejected(self):
        base = FixedSetSampler(points=np.array([[0.0, 0.0]]), seed=0)
        with pytest.raises(ValueError, match="negative"):
            fixed_noisy_generator(base, sigma=-1.0)


def small_setup(seed=0, metric_eval_n=0, iters=3):
    real = EightGaussians(seed=seed + 1)
    gen_model = Mlp(MlpSpec((2, 8, 2)))
    fake = LearnedGenerator(
        model=gen_model,
        params=gen_model.init_params(seed + 2),
        latent=LatentSampler(dim=2, seed=seed + 3),
    )
    critic_model = Mlp(MlpSpec((2, 8, 1)))
    critic_params = critic_model.init_params(seed + 4)
    config = TrainConfig(
        iters=iters, n_critic=2, batch_size=8, seed=seed,
        timing=False, metric_eval_n=metric_eval_n,
    )
    return config, real, fake, critic_model, critic_params


class TestTrainLoop:
    def test_runs_and_reports_each_iteration(self):
        config, real, fake, model, params = small_setup()
        before = params.copy()
        seen = []
        result = train(config, real, fake, model, params, sinks=(lambda s: seen.append(s.iteration),))
        assert [r.iteration for r in result.rows] == [1, 2, 3]
        assert seen == [1, 2, 3]
        assert not params.equal(before)
        assert result.gen_params is fake.params
        assert all(np.isfinite(r.critic_loss) for r in result.rows)
        assert all(r.seconds == 0.0 for r in result.rows)  # timing off

    def test_deterministic_given_seeds(self):
        runs = []
        for _ in range(2):
            config, real, fake, model, params = small_setup(seed=5)
            res = train(config, real, fake, model, params)
            runs.append([(r.critic_loss, r.gen_loss, r.w_estimate) for r in res.rows])
        assert runs[0] == runs[1]

    def test_fixed_fake_skips_generator(self):
        config, real, _, model, params = small_setup()
        base = EightGaussians(seed=77)
        fake = fixed_noisy_generator(base, sigma=0.5, seed=78)
        result = train(config, real, fake, model, params)
        assert result.gen_params is None
        assert len(result.rows) == config.iters

    def test_probe_metric_is_finite_and_deterministic(self):
        vals = []
        for _ in range(2):
            config, real, fake, model, params = small_setup(seed=2, metric_eval_n=16)
            res = train(config, real, fake, model, params)
            vals.append([r.w_estimate for r in res.rows])
        assert vals[0] == vals[1]
        assert all(np.isfinite(v) for v in vals[0])

    def test_divergence_carries_last_good_params(self):
        config, real, fake, model, params = small_setup()
        config = TrainConfig(
            iters=5, n_critic=2, batch_size=8, seed=0, timing=False, alpha=1e200,
        )
        with pytest.raises(TrainDiverged) as exc_info:
            train(config, real, fake, model, params)
        err = exc_info.value
        assert err.iteration >= 1
        assert str(err.iteration) in str(err)
        for name in err.critic_params:
            assert np.all(np.isfinite(err.critic_params[name]))


class TestMetricsCsv:
    def test_header_and_comment(self):
        config, real, fake, model, params = small_setup()
        result = train(config, real, fake, model, params)
        text = format_metrics_csv(result.rows, comment="cmd=test seed=0")
        lines = text.strip().split("\n")
        assert lines[0] == "# cmd=test seed=0"
        assert lines[1] == "iter,critic_loss,gen_loss,w_estimate,gp_mean_norm,gp_msd,seconds"
        assert len(lines) == 2 + len(result.rows)
