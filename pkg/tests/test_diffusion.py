import hashlib

import numpy as np
import pytest

from cytoprobe import diffusion as df
from cytoprobe.errors import ValidationError


def gaussian_config(**kw):
    base = dict(
        data_dim=1,
        num_classes=1,
        hidden=(64, 64, 64, 64),
        epochs=75,
        batch_size=128,
        learning_rate=1e-3,
        seed=1,
    )
    base.update(kw)
    return df.DiffusionConfig(**base)


class TestNoiseSchedule:
    def test_linear_defaults_scale_with_T(self):
        full = df.NoiseSchedule.linear(1000)
        assert full.betas[0] == pytest.approx(1e-4)
        assert full.betas[-1] == pytest.approx(0.02)
        desk = df.NoiseSchedule.linear(100)
        assert desk.betas[0] == pytest.approx(1e-3)
        assert desk.betas[-1] == pytest.approx(0.2)

    def test_alpha_bars_are_cumulative_products(self):
        sched = df.NoiseSchedule.linear(50)
        manual = np.cumprod(1.0 - sched.betas)
        assert np.max(np.abs(sched.alpha_bars - manual)) < 1e-12
        assert np.all(np.diff(sched.alpha_bars) < 0.0)

    def test_alpha_bar_zero_boundary(self):
        sched = df.NoiseSchedule.linear(10)
        assert sched.alpha_bar(0) == 1.0

    def test_bad_betas_rejected(self):
        with pytest.raises(ValidationError):
            df.NoiseSchedule(np.array([0.1, 1.5]))
        with pytest.raises(ValidationError):
            df.NoiseSchedule(np.array([]))


class TestForwardNoise:
    def test_t_zero_returns_x0(self):
        sched = df.NoiseSchedule.linear(20)
        x0 = np.array([1.0, -2.0, 0.5])
        x_t, _ = df.forward_noise(x0, 0, sched, 3)
        assert np.array_equal(x_t, x0)

    def test_t_out_of_range(self):
        sched = df.NoiseSchedule.linear(20)
        with pytest.raises(ValidationError):
            df.forward_noise(np.zeros(2), 21, sched, 0)
        with pytest.raises(ValidationError):
            df.forward_noise(np.zeros(2), -1, sched, 0)

    def test_seed_determinism(self):
        sched = df.NoiseSchedule.linear(20)
        a = df.forward_noise(np.ones(4), 10, sched, 9)
        b = df.forward_noise(np.ones(4), 10, sched, 9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_terminal_marginal_is_standard_normal(self):
        # moment estimation oracle: 10k draws, tolerance 0.05
        sched = df.NoiseSchedule.linear(100)
        x0 = np.random.default_rng(7).standard_normal(10_000)
        x_t, _ = df.forward_noise(x0, sched.T, sched, 11)
        assert abs(x_t.mean()) < 0.05
        assert abs(x_t.var() - 1.0) < 0.05

    def test_marginal_consistency_mid_chain(self):
        # Var(x_t) == abar_t Var(x0) + (1 - abar_t)
        sched = df.NoiseSchedule.linear(100)
        rng = np.random.default_rng(13)
        x0 = rng.normal(0.0, 2.0, size=10_000)
        t = 40
        x_t, _ = df.forward_noise(x0, t, sched, 17)
        ab = sched.alpha_bar(t)
        expected = ab * 4.0 + (1.0 - ab)
        assert abs(x_t.var() - expected) / expected < 0.05


class TestAnalyticDenoiser:
    def test_closed_form_value(self):
        sched = df.NoiseSchedule(np.array([0.5]))
        oracle = df.AnalyticGaussianDenoiser(sched, mu=2.0, var=1.0)
        # ab=0.5, denom = 0.5*1 + 0.5 = 1; eps* = sqrt(0.5)(x - sqrt(0.5)*2)
        x = np.array([[1.0]])
        expected = np.sqrt(0.5) * (1.0 - np.sqrt(0.5) * 2.0)
        assert oracle.predict(x, 1)[0, 0] == pytest.approx(expected, rel=1e-12)


class TestReverseSample:
    def test_one_step_posterior_mean_form(self):
        # T=1 with a near-total noising step: the single update must be the
        # exact affine posterior-mean map of the initial draw
        beta = 0.99
        sched = df.NoiseSchedule(np.array([beta]))
        mu, var = 2.0, 1.0
        oracle = df.AnalyticGaussianDenoiser(sched, mu, var)
        n = 10_000
        samples = df.reverse_sample(oracle, sched, 0, n, 5, data_dim=1)

        ab = 1.0 - beta
        denom = ab * var + 1.0 - ab
        k = beta / denom
        c = (1.0 - k) / np.sqrt(1.0 - beta)
        d = k * np.sqrt(ab) * mu / np.sqrt(1.0 - beta)
        x_T = np.random.default_rng(5).standard_normal((n, 1))
        assert np.allclose(samples, c * x_T + d, rtol=1e-12)
        assert abs(samples.mean() - mu) < 0.05

    def test_gaussian_end_to_end(self):
        # the reverse chain with the exact score must reproduce the data law
        sched = df.NoiseSchedule.linear(100)
        oracle = df.AnalyticGaussianDenoiser(sched, mu=3.0, var=0.25)
        samples = df.reverse_sample(oracle, sched, 0, 10_000, 42, data_dim=1)
        assert abs(samples.mean() - 3.0) < 0.05
        assert abs(samples.var() - 0.25) < 0.05

    def test_seed_determinism(self):
        sched = df.NoiseSchedule.linear(30)
        oracle = df.AnalyticGaussianDenoiser(sched, 0.0, 1.0)
        a = df.reverse_sample(oracle, sched, 0, 50, 8, data_dim=1)
        b = df.reverse_sample(oracle, sched, 0, 50, 8, data_dim=1)
        assert np.array_equal(a, b)

    def test_distribution_preserving_in_2d(self):
        # mean within 0.05 per axis, covariance within 0.1 elementwise
        sched = df.NoiseSchedule.linear(100)
        oracle = df.AnalyticGaussianDenoiser(sched, mu=3.0, var=0.25)
        samples = df.reverse_sample(oracle, sched, 0, 10_000, 21, data_dim=2)
        assert np.all(np.abs(samples.mean(axis=0) - 3.0) < 0.05)
        cov = np.cov(samples.T)
        assert np.all(np.abs(cov - 0.25 * np.eye(2)) < 0.1)


class TestTrainDenoiser:
    def test_zero_epochs(self):
        sched = df.NoiseSchedule.linear(10)
        den, hist = df.train_denoiser(np.zeros(16), np.zeros(16, dtype=int), sched,
                                      gaussian_config(hidden=(8, 8, 8, 8)), epochs=0)
        assert hist == []
        assert den.net.num_params > 0

    def test_trained_matches_analytic_optimum(self):
        # analytic optimal denoiser for x0 ~ N(0,1): eps*(x,t) = x * sqrt(1-abar_t)
        sched = df.NoiseSchedule.linear(100)
        rng = np.random.default_rng(0)
        X = rng.standard_normal(4096)
        den, hist = df.train_denoiser(X, np.zeros(4096, dtype=int), sched, gaussian_config())

        oracle = df.AnalyticGaussianDenoiser(sched, 0.0, 1.0)
        xs = np.linspace(-2.5, 2.5, 21)
        errs = []
        for t in (5, 20, 40, 60, 80, 100):
            pred = den.predict(xs[:, None], t, 0)[:, 0]
            star = oracle.predict(xs[:, None], t)[:, 0]
            errs.append(np.mean((pred - star) ** 2))
        assert float(np.mean(errs)) < 0.05

        # loss history: finite, and the 100-step trailing mean never climbs
        # more than batch noise (0.03) above its running minimum over the
        # first 80% of training
        h = np.asarray(hist)
        assert np.all(np.isfinite(h))
        trail = np.convolve(h, np.ones(100) / 100, mode="valid")
        seg = trail[: int(0.8 * len(h)) - 100]
        running_min = np.minimum.accumulate(seg)
        assert np.max(seg - running_min) < 0.03

    def test_empty_dataset_rejected(self):
        sched = df.NoiseSchedule.linear(10)
        with pytest.raises(ValidationError):
            df.train_denoiser(np.zeros((0, 1)), np.zeros(0, dtype=int), sched, gaussian_config())


class TestSynthesizeCorpus:
    def _denoiser(self):
        cfg = df.DiffusionConfig(
            data_dim=df.IMAGE_DIM, num_classes=7, hidden=(8, 8, 8, 8), seed=0
        )
        return df.build_denoiser(cfg)

    def test_counts_and_labels(self):
        sched = df.NoiseSchedule.linear(10)
        records = df.synthesize_corpus(self._denoiser(), sched, 2, seed=1)
        assert len(records) == 14
        assert all(r.provenance == "dm" for r in records)
        assert all(r.class_label is not None for r in records)

    def test_per_class_zero(self):
        sched = df.NoiseSchedule.linear(10)
        assert df.synthesize_corpus(self._denoiser(), sched, 0, seed=1) == []

    def test_different_seeds_differ(self):
        sched = df.NoiseSchedule.linear(10)
        den = self._denoiser()
        a = df.synthesize_corpus(den, sched, 1, seed=1)
        b = df.synthesize_corpus(den, sched, 1, seed=2)
        digest = lambda recs: hashlib.sha256(b"".join(r.pixels.tobytes() for r in recs)).hexdigest()
        assert digest(a) != digest(b)

    def test_wrong_dim_rejected(self):
        sched = df.NoiseSchedule.linear(10)
        cfg = df.DiffusionConfig(data_dim=2, num_classes=2, hidden=(8, 8, 8, 8))
        with pytest.raises(ValidationError):
            df.synthesize_corpus(df.build_denoiser(cfg), sched, 1, seed=0)


class TestCheckpoint:
    def test_round_trip_with_schedule_header(self, tmp_path):
        cfg = df.DiffusionConfig(data_dim=3, num_classes=2, hidden=(8, 8, 8, 8), seed=4)
        den = df.build_denoiser(cfg)
        sched = df.NoiseSchedule.linear(25)
        path = tmp_path / "dm.json"
        df.save_denoiser(path, den, sched)
        loaded, loaded_sched = df.load_denoiser(path)
        assert loaded_sched.T == 25
        assert np.array_equal(loaded_sched.betas, sched.betas)
        assert np.array_equal(loaded.net.param_vector(), den.net.param_vector())
        x = np.random.default_rng(1).standard_normal((4, 3))
        assert np.array_equal(loaded.predict(x, 5, 1), den.predict(x, 5, 1))
