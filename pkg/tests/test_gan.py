import math

import numpy as np
import pytest

from cytoprobe import gan, nn
from cytoprobe.errors import ValidationError


def toy_config(**kw):
    base = dict(
        data_dim=2,
        num_classes=2,
        noise_dim=8,
        batch_size=64,
        learning_rate=1e-3,
        seed=3,
        hidden=(32, 64, 64, 32),
        generator_output="identity",
    )
    base.update(kw)
    return gan.GanConfig(**base)


class StubRng:
    """Feeds pre-scripted standard_normal draws to train_step."""

    def __init__(self, draws):
        self.draws = [np.asarray(d, dtype=float) for d in draws]

    def standard_normal(self, shape):
        out = self.draws.pop(0)
        assert out.shape == tuple(shape)
        return out


class TestGenerate:
    def test_count_zero(self):
        model = gan.build_model(toy_config())
        assert gan.generate(model, 0, 0, 1).shape == (0, 2)

    def test_seed_determinism(self):
        model = gan.build_model(toy_config())
        a = gan.generate(model, 1, 5, 99)
        b = gan.generate(model, 1, 5, 99)
        assert np.array_equal(a, b)

    def test_zero_weight_generator_outputs_zero(self):
        model = gan.build_model(toy_config())
        model.generator.set_param_vector(np.zeros(model.generator.num_params))
        out = gan.generate(model, 0, 4, 7)
        assert np.allclose(out, 0.0)

    def test_class_out_of_range(self):
        model = gan.build_model(toy_config())
        with pytest.raises(ValidationError):
            gan.generate(model, 2, 1, 0)


class TestTrainStep:
    def _tiny_model(self, g_params, d_params):
        cfg = gan.GanConfig(
            data_dim=1, num_classes=1, noise_dim=1, batch_size=2,
            learning_rate=0.01, seed=0, hidden=(), generator_output="identity",
        )
        g = nn.DenseNet([nn.Layer(nn.Tensor.of([[g_params[0]], [g_params[1]]]),
                                  nn.Tensor.of([g_params[2]]), "identity")])
        d = nn.DenseNet([nn.Layer(nn.Tensor.of([[d_params[0]], [d_params[1]]]),
                                  nn.Tensor.of([d_params[2]]), "identity")])
        return gan.GanModel(g, d, cfg)

    def test_constant_zero_logit_discriminator_gives_ln2(self):
        model = self._tiny_model((0.3, -0.2, 0.1), (0.0, 0.0, 0.0))
        g_opt = nn.AdamOptimizer(model.generator, 0.01)
        d_opt = nn.AdamOptimizer(model.discriminator, 0.01)
        rng = StubRng([np.array([[0.5], [-1.0]]), np.array([[0.2], [0.9]])])
        d_loss, _ = gan.train_step(model, np.array([[1.0], [2.0]]), [0, 0], g_opt, d_opt, rng)
        assert d_loss == pytest.approx(math.log(2.0), abs=1e-15)

    def test_saturated_discriminator_stays_finite(self):
        # bias drives every logit far past the clamp; both losses stay finite
        model = self._tiny_model((0.3, -0.2, 0.1), (0.0, 0.0, 1e5))
        g_opt = nn.AdamOptimizer(model.generator, 0.01)
        d_opt = nn.AdamOptimizer(model.discriminator, 0.01)
        rng = StubRng([np.array([[0.5], [-1.0]]), np.array([[0.2], [0.9]])])
        d_loss, g_loss = gan.train_step(model, np.array([[1.0], [2.0]]), [0, 0], g_opt, d_opt, rng)
        assert math.isfinite(d_loss) and math.isfinite(g_loss)

    def test_single_step_matches_hand_unrolled_adam_on_bce(self):
        # independent scalar-arithmetic replay of one discriminator update
        # followed by one generator update
        lr = 0.01
        g0 = (0.4, -0.3, 0.2)   # generator: out = wn*noise + wc*1 + b
        d0 = (0.6, 0.1, -0.2)   # discriminator: logit = wx*x + wc*1 + b
        reals = [1.5, -0.5]
        noise_d = [0.5, -1.0]
        noise_g = [0.2, 0.9]

        def sigma(z):
            return 1.0 / (1.0 + math.exp(-z))

        def adam1(p, g):  # first Adam step per parameter, fresh state
            m = 0.1 * g
            v = 0.001 * g * g
            return p - lr * (m / 0.1) / (math.sqrt(v / 0.001) + 1e-8)

        # --- discriminator phase
        fakes = [g0[0] * n + g0[1] + g0[2] for n in noise_d]
        xs = reals + fakes
        logits = [d0[0] * x + d0[1] + d0[2] for x in xs]
        targets = [1.0, 1.0, 0.0, 0.0]
        gz = [(sigma(z) - t) / 4.0 for z, t in zip(logits, targets)]
        d_grads = (
            sum(x * g for x, g in zip(xs, gz)),  # wx
            sum(gz),                             # wc (class feature is 1)
            sum(gz),                             # b
        )
        d1 = tuple(adam1(p, g) for p, g in zip(d0, d_grads))

        # --- generator phase (new noise, updated discriminator, target 1)
        fakes_g = [g0[0] * n + g0[1] + g0[2] for n in noise_g]
        logits_g = [d1[0] * x + d1[1] + d1[2] for x in fakes_g]
        gz_g = [(sigma(z) - 1.0) / 2.0 for z in logits_g]
        gout = [gzi * d1[0] for gzi in gz_g]  # dLoss/d(fake data)
        g_grads = (
            sum(n * go for n, go in zip(noise_g, gout)),  # wn
            sum(gout),                                    # wc
            sum(gout),                                    # b
        )
        g1 = tuple(adam1(p, g) for p, g in zip(g0, g_grads))

        model = self._tiny_model(g0, d0)
        g_opt = nn.AdamOptimizer(model.generator, lr)
        d_opt = nn.AdamOptimizer(model.discriminator, lr)
        rng = StubRng([np.array([[n] for n in noise_d]), np.array([[n] for n in noise_g])])
        gan.train_step(model, np.array([[r] for r in reals]), [0, 0], g_opt, d_opt, rng)

        assert np.allclose(model.discriminator.param_vector(), d1, rtol=1e-12)
        assert np.allclose(model.generator.param_vector(), g1, rtol=1e-12)

    def test_batch_of_one_rejected(self):
        model = self._tiny_model((0.1, 0.1, 0.1), (0.1, 0.1, 0.1))
        g_opt = nn.AdamOptimizer(model.generator, 0.01)
        d_opt = nn.AdamOptimizer(model.discriminator, 0.01)
        with pytest.raises(ValidationError):
            gan.train_step(model, np.array([[1.0]]), [0], g_opt, d_opt, StubRng([]))


class TestTrain:
    def test_zero_epochs(self):
        cfg = toy_config(epochs=0)
        model = gan.build_model(cfg)
        before = model.generator.param_vector()
        X, y = gan.gaussian_mixture_toy(100, seed=1)
        history = gan.train(model, X, y, cfg)
        assert len(history) == 0
        assert np.array_equal(model.generator.param_vector(), before)

    def test_history_length_counts_steps(self):
        cfg = toy_config(epochs=3, batch_size=32)
        model = gan.build_model(cfg)
        X, y = gan.gaussian_mixture_toy(50, seed=2)  # 100 items -> 4 batches/epoch
        history = gan.train(model, X, y, cfg)
        assert len(history) == 3 * math.ceil(100 / 32)

    def test_deterministic_given_seed(self):
        X, y = gan.gaussian_mixture_toy(60, seed=4)
        params = []
        for _ in range(2):
            cfg = toy_config(seed=12)
            model = gan.build_model(cfg)
            gan.train(model, X, y, cfg, steps=40)
            params.append(model.generator.param_vector())
        assert np.array_equal(params[0], params[1])

    def test_parameters_stay_finite(self):
        cfg = toy_config(seed=6)
        model = gan.build_model(cfg)
        X, y = gan.gaussian_mixture_toy(100, seed=7)
        gan.train(model, X, y, cfg, steps=60)
        assert np.all(np.isfinite(model.generator.param_vector()))
        assert np.all(np.isfinite(model.discriminator.param_vector()))

    def test_toy_mixture_conditioning(self):
        # nearest-mode oracle after 2000 steps; thresholds fixed up front
        X, y = gan.gaussian_mixture_toy(1000, seed=5)
        cfg = toy_config(seed=3)
        model = gan.build_model(cfg)
        gan.train(model, X, y, cfg, steps=2000)
        modes = np.array([[-2.0, 0.0], [2.0, 0.0]])
        means = []
        for c in (0, 1):
            samples = gan.generate(model, c, 500, 100 + c)
            dists = ((samples[:, None, :] - modes[None]) ** 2).sum(axis=-1)
            frac = (np.argmin(dists, axis=1) == c).mean()
            assert frac >= 0.9, f"class {c}: only {frac:.2%} near its mode"
            means.append(samples.mean(axis=0))
        # conditioning sensitivity in the mode coordinate
        assert abs(means[0][0] - means[1][0]) >= 1.0


class TestSynthesizeCorpus:
    def _image_model(self):
        cfg = gan.GanConfig(
            data_dim=gan.IMAGE_DIM, num_classes=7, noise_dim=4,
            hidden=(8, 8, 8, 8), seed=0,
        )
        return gan.build_model(cfg)

    def test_counts(self):
        model = self._image_model()
        records = gan.synthesize_corpus(model, 2, seed=1)
        assert len(records) == 14
        assert all(r.provenance == "cgan" for r in records)
        assert all(r.class_label is not None for r in records)

    def test_per_class_zero(self):
        assert gan.synthesize_corpus(self._image_model(), 0, seed=1) == []

    def test_quantize_clamps(self):
        vec = np.full(gan.IMAGE_DIM, 1.7)
        px = gan.quantize_to_pixels(vec)
        assert px.max() == px.min() == 255
        assert gan.quantize_to_pixels(np.full(gan.IMAGE_DIM, -1.0)).min() == 0

    def test_wrong_dim_rejected(self):
        model = gan.build_model(toy_config())
        with pytest.raises(ValidationError):
            gan.synthesize_corpus(model, 1, seed=0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = toy_config()
        model = gan.build_model(cfg)
        path = tmp_path / "gan.json"
        gan.save_gan(path, model)
        loaded = gan.load_gan(path)
        assert loaded.config == cfg
        assert np.array_equal(
            loaded.generator.param_vector(), model.generator.param_vector()
        )
        a = gan.generate(loaded, 0, 3, 5)
        b = gan.generate(model, 0, 3, 5)
        assert np.array_equal(a, b)
