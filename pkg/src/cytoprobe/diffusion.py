"""DDPM-style diffusion: forward noising, noise-prediction net, reverse sampler.

The forward process draws x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps. The
reverse sampler applies the standard posterior-mean step with sigma_t^2 =
beta_t noise injection for t = T..2 and no noise at t = 1. A dense
noise-prediction net stands in for a U-net at desk scale, conditioned on a
sinusoidal time embedding and a one-hot class.

For Gaussian data the exact posterior-mean noise predictor is available in
closed form (:class:`AnalyticGaussianDenoiser`), which makes the whole
reverse chain verifiable against the data law it must reproduce.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .catalog import CLASS_NAMES, IMAGE_SIZE, ImageRecord
from .errors import NumericError, ValidationError
from .gan import one_hot, quantize_to_pixels

DM_FORMAT = "cytoprobe-dm"
IMAGE_DIM = IMAGE_SIZE * IMAGE_SIZE * 3

# Reference beta range at T=1000; shorter desk-scale schedules scale the
# range by 1000/T so the chain still ends at (nearly) pure noise.
FULL_SCALE_T = 1000
FULL_SCALE_BETA = (1e-4, 0.02)


@dataclass
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size == 0:
            raise ValidationError("betas must be a non-empty 1-D array")
        if np.any((self.betas <= 0.0) | (self.betas >= 1.0)):
            raise ValidationError("every beta must lie in (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ValidationError("alpha_bars must be strictly decreasing")

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at step t; the t=0 boundary is exactly 1."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t: int) -> None:
        if not (1 <= t <= self.T):
            raise ValidationError(f"step t={t} outside [1, {self.T}]")

    @classmethod
    def linear(
        cls, T: int = 100, beta_start: float | None = None, beta_end: float | None = None
    ) -> "NoiseSchedule":
        if T < 1:
            raise ValidationError("T must be >= 1")
        scale = FULL_SCALE_T / T
        if beta_start is None:
            beta_start = FULL_SCALE_BETA[0] * scale
        if beta_end is None:
            beta_end = min(FULL_SCALE_BETA[1] * scale, 0.999)
        return cls(np.linspace(beta_start, beta_end, T))


def forward_noise(x0, t: int, schedule: NoiseSchedule, seed_or_rng) -> tuple[np.ndarray, np.ndarray]:
    """Jump straight to step t: returns (x_t, eps) with eps ~ N(0, I)."""
    if not (0 <= t <= schedule.T):
        raise ValidationError(f"step t={t} outside [0, {schedule.T}]")
    x0 = np.asarray(x0, dtype=np.float64)
    rng = np.random.default_rng(seed_or_rng) if isinstance(seed_or_rng, (int, np.integer)) else seed_or_rng
    eps = rng.standard_normal(x0.shape)
    ab = schedule.alpha_bar(t)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return x_t, eps


def time_embedding(t, n_features: int = 16) -> np.ndarray:
    """Sinusoidal features of the raw step index; shape (..., n_features)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = n_features // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class DiffusionConfig:
    data_dim: int
    num_classes: int = len(CLASS_NAMES)
    time_features: int = 16
    hidden: tuple[int, ...] = (128, 128, 128, 128)
    epochs: int = 75
    batch_size: int = 64
    learning_rate: float = 1e-3
    leaky_slope: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.data_dim <= 0 or self.num_classes <= 0 or self.batch_size <= 0:
            raise ValidationError("data_dim, num_classes, batch_size must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.time_features % 2 != 0:
            raise ValidationError("time_features must be even")


class Denoiser:
    """Noise predictor: (x_t ++ time embedding ++ one-hot class) -> eps-hat."""

    def __init__(self, net: nn.DenseNet, config: DiffusionConfig):
        expected = config.data_dim + config.time_features + config.num_classes
        if net.in_dim != expected:
            raise ValidationError(f"denoiser net in-dim {net.in_dim} != {expected}")
        if net.out_dim != config.data_dim:
            raise ValidationError("denoiser output dim must equal the data dim")
        self.net = net
        self.config = config

    def predict(self, x: np.ndarray, t, class_idx) -> np.ndarray:
        """eps-hat for a batch; ``t``/``class_idx`` may be scalar or per-row."""
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        b = x.shape[0]
        t_arr = np.broadcast_to(np.asarray(t), (b,))
        cls_arr = np.broadcast_to(np.asarray(class_idx), (b,))
        inp = np.concatenate(
            [x, time_embedding(t_arr, cfg.time_features), one_hot(cls_arr, cfg.num_classes)],
            axis=1,
        )
        out = self.net.forward(inp)
        return out[0] if single else out


class AnalyticGaussianDenoiser:
    """Exact optimal noise predictor when x0 ~ N(mu, var) i.i.d. per dim.

    eps*(x, t) = sqrt(1-abar_t) (x - sqrt(abar_t) mu) / (abar_t var + 1 - abar_t)
    """

    def __init__(self, schedule: NoiseSchedule, mu: float = 0.0, var: float = 1.0):
        if var <= 0.0:
            raise ValidationError("var must be positive")
        self.schedule = schedule
        self.mu = float(mu)
        self.var = float(var)

    def predict(self, x: np.ndarray, t, class_idx=0) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        t_int = int(np.asarray(t).reshape(-1)[0])
        ab = self.schedule.alpha_bar(t_int)
        denom = ab * self.var + 1.0 - ab
        return np.sqrt(1.0 - ab) * (x - np.sqrt(ab) * self.mu) / denom


def build_denoiser(config: DiffusionConfig) -> Denoiser:
    config.validate()
    net = nn.five_stage(
        config.data_dim + config.time_features + config.num_classes,
        config.data_dim,
        config.hidden,
        final_activation="identity",
        leaky_slope=config.leaky_slope,
        seed=config.seed,
    )
    return Denoiser(net, config)


def train_denoiser(
    data: np.ndarray,
    labels: np.ndarray,
    schedule: NoiseSchedule,
    config: DiffusionConfig,
    epochs: int | None = None,
) -> tuple[Denoiser, list[float]]:
    """Minimize MSE between drawn and predicted noise over uniform steps.

    Per training example a step t ~ Uniform{1..T} and a noise draw are
    sampled; the loss is mean((eps - eps_hat)^2). Returns the denoiser and
    the per-step loss history.
    """
    config.validate()
    X = np.asarray(data, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValidationError("empty training set")
    if X.shape[0] != y.shape[0]:
        raise ValidationError("data/label count mismatch")
    n = X.shape[0]
    n_epochs = config.epochs if epochs is None else epochs

    denoiser = build_denoiser(config)
    opt = nn.AdamOptimizer(denoiser.net, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    abars = schedule.alpha_bars

    for _ in range(n_epochs):
        order = rng.permutation(n)
        for b in range(-(-n // config.batch_size)):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            x0 = X[idx]
            t = rng.integers(1, schedule.T + 1, size=idx.size)
            eps = rng.standard_normal(x0.shape)
            ab = abars[t - 1][:, None]
            x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
            pred = denoiser.predict(x_t, t, y[idx])
            diff = pred - eps
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise NumericError(f"non-finite denoiser loss at step {len(history)}")
            denoiser.net.backward(2.0 * diff / diff.size)
            opt.step()
            history.append(loss)
    return denoiser, history


def reverse_sample(
    denoiser,
    schedule: NoiseSchedule,
    class_idx: int,
    count: int,
    seed_or_rng,
    data_dim: int | None = None,
) -> np.ndarray:
    """Ancestral sampling from x_T ~ N(0, I) down to x_0.

    ``denoiser`` is anything with a ``predict(x, t, class_idx)`` method,
    including the analytic Gaussian oracle.
    """
    if count < 0:
        raise ValidationError("count must be >= 0")
    if data_dim is None:
        data_dim = getattr(getattr(denoiser, "config", None), "data_dim", 1)
    rng = np.random.default_rng(seed_or_rng) if isinstance(seed_or_rng, (int, np.integer)) else seed_or_rng
    x = rng.standard_normal((count, data_dim))
    for t in range(schedule.T, 0, -1):
        beta = schedule.betas[t - 1]
        alpha = schedule.alphas[t - 1]
        ab = schedule.alpha_bars[t - 1]
        eps_hat = denoiser.predict(x, t, class_idx)
        mean = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            x = mean + np.sqrt(beta) * rng.standard_normal(x.shape)
        else:
            x = mean
    if not np.all(np.isfinite(x)):
        raise NumericError("reverse sampling produced non-finite values")
    return x


def synthesize_corpus(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    per_class: int,
    seed: int,
) -> list[ImageRecord]:
    """Class-conditioned image records with provenance ``dm``."""
    cfg = denoiser.config
    if cfg.data_dim != IMAGE_DIM:
        raise ValidationError(
            f"corpus synthesis needs data_dim {IMAGE_DIM} (64x64x3), got {cfg.data_dim}"
        )
    if per_class < 0:
        raise ValidationError("per_class must be >= 0")
    records = []
    for class_idx, name in enumerate(CLASS_NAMES[: cfg.num_classes]):
        samples = reverse_sample(denoiser, schedule, class_idx, per_class, seed + class_idx)
        for i in range(per_class):
            rec = ImageRecord(
                id=f"dm-{name}-{seed:04d}-{i:05d}",
                pixels=quantize_to_pixels(samples[i]),
                provenance="dm",
                class_label=name,
            )
            rec.validate()
            records.append(rec)
    return records


def save_denoiser(path, denoiser: Denoiser, schedule: NoiseSchedule) -> None:
    """Checkpoint with the schedule serialized in the header."""
    cfg = denoiser.config
    doc = {
        "format": DM_FORMAT,
        "version": 1,
        "schedule": {"T": schedule.T, "betas": schedule.betas.tolist()},
        "config": {
            "data_dim": cfg.data_dim,
            "num_classes": cfg.num_classes,
            "time_features": cfg.time_features,
            "hidden": list(cfg.hidden),
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "leaky_slope": cfg.leaky_slope,
            "seed": cfg.seed,
        },
        "net": nn.net_to_doc(denoiser.net),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_denoiser(path) -> tuple[Denoiser, NoiseSchedule]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != DM_FORMAT:
        raise ValidationError(f"not a {DM_FORMAT} file: {path}")
    raw = dict(doc["config"])
    raw["hidden"] = tuple(raw["hidden"])
    cfg = DiffusionConfig(**raw)
    schedule = NoiseSchedule(np.asarray(doc["schedule"]["betas"]))
    if schedule.T != doc["schedule"]["T"]:
        raise ValidationError("schedule header T does not match betas length")
    return Denoiser(nn.net_from_doc(doc["net"]), cfg), schedule
