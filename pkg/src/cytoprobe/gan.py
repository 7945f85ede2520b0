"""Label-conditioned GAN trained as a two-player min-max game at desk scale.

The generator maps (noise ++ one-hot label) to a data vector; the
discriminator maps (data ++ one-hot label) to one logit. The generator
update uses the non-saturating surrogate (target 1 on fakes) rather than
the literal sign-flipped min-max objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .catalog import CLASS_NAMES, IMAGE_SIZE, ImageRecord
from .errors import NumericError, ValidationError

# Logits are clamped here before the loss so a saturated discriminator
# cannot push the loss to infinity; gradients in the operating range are
# untouched and gradients beyond the clamp are zero.
LOGIT_CAP = 30.0

GAN_FORMAT = "cytoprobe-gan"
IMAGE_DIM = IMAGE_SIZE * IMAGE_SIZE * 3


@dataclass
class GanConfig:
    data_dim: int
    num_classes: int = len(CLASS_NAMES)
    noise_dim: int = 32
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.0002
    leaky_slope: float = 0.2
    seed: int = 0
    hidden: tuple[int, ...] = nn.DEFAULT_HIDDEN
    generator_output: str = "tanh"

    def validate(self) -> None:
        for name in ("data_dim", "num_classes", "noise_dim", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.learning_rate <= 0 or self.leaky_slope <= 0:
            raise ValidationError("learning_rate and leaky_slope must be positive")


@dataclass
class GanModel:
    generator: nn.DenseNet
    discriminator: nn.DenseNet
    config: GanConfig

    def validate(self) -> None:
        cfg = self.config
        if self.generator.in_dim != cfg.noise_dim + cfg.num_classes:
            raise ValidationError(
                f"generator in-dim {self.generator.in_dim} != noise+classes "
                f"{cfg.noise_dim + cfg.num_classes}"
            )
        if self.generator.out_dim != cfg.data_dim:
            raise ValidationError("generator out-dim != data_dim")
        if self.discriminator.in_dim != cfg.data_dim + cfg.num_classes:
            raise ValidationError("discriminator in-dim != data+classes")
        if self.discriminator.out_dim != 1:
            raise ValidationError("discriminator must emit a single logit")


def build_model(config: GanConfig) -> GanModel:
    config.validate()
    gen = nn.five_stage(
        config.noise_dim + config.num_classes,
        config.data_dim,
        config.hidden,
        final_activation=config.generator_output,
        leaky_slope=config.leaky_slope,
        seed=config.seed,
    )
    disc = nn.five_stage(
        config.data_dim + config.num_classes,
        1,
        config.hidden,
        final_activation="identity",
        leaky_slope=config.leaky_slope,
        seed=config.seed + 1,
    )
    model = GanModel(gen, disc, config)
    model.validate()
    return model


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(
            f"class index out of range [0, {num_classes}): {labels.min()}..{labels.max()}"
        )
    out = np.zeros((labels.size, num_classes), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def generate(model: GanModel, class_idx: int, count: int, seed_or_rng) -> np.ndarray:
    """``count`` class-conditioned samples; deterministic per seed."""
    cfg = model.config
    if not (0 <= class_idx < cfg.num_classes):
        raise ValidationError(f"class index {class_idx} out of range [0, {cfg.num_classes})")
    if count < 0:
        raise ValidationError("count must be >= 0")
    if count == 0:
        return np.zeros((0, cfg.data_dim))
    rng = np.random.default_rng(seed_or_rng) if isinstance(seed_or_rng, (int, np.integer)) else seed_or_rng
    noise = rng.standard_normal((count, cfg.noise_dim))
    labels = one_hot(np.full(count, class_idx), cfg.num_classes)
    return model.generator.forward(np.concatenate([noise, labels], axis=1))


def _clipped_logits(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    clipped = np.clip(raw, -LOGIT_CAP, LOGIT_CAP)
    pass_through = (np.abs(raw) < LOGIT_CAP).astype(np.float64)
    return clipped, pass_through


def train_step(
    model: GanModel,
    real_batch: np.ndarray,
    labels: np.ndarray,
    g_opt: nn.AdamOptimizer,
    d_opt: nn.AdamOptimizer,
    rng,
    class_weight_vec: np.ndarray | None = None,
) -> tuple[float, float]:
    """One discriminator update then one generator update.

    Discriminator sees the real batch (target 1) and a freshly generated
    batch (target 0), both weighted per class. The generator then maximizes
    discriminator belief on new fakes (target 1). Returns both losses.
    """
    cfg = model.config
    real = np.asarray(real_batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if real.ndim != 2 or real.shape[1] != cfg.data_dim:
        raise ValidationError(f"real batch must be (B, {cfg.data_dim})")
    batch = real.shape[0]
    if batch < 2:
        raise ValidationError("train_step needs a batch of at least 2")
    hot = one_hot(labels, cfg.num_classes)
    if class_weight_vec is None:
        class_weight_vec = np.ones(cfg.num_classes)
    w = class_weight_vec[labels]

    # discriminator pass: reals (target 1) then fakes (target 0)
    noise = rng.standard_normal((batch, cfg.noise_dim))
    fakes = model.generator.forward(np.concatenate([noise, hot], axis=1))
    d_in = np.concatenate(
        [np.concatenate([real, hot], axis=1), np.concatenate([fakes, hot], axis=1)],
        axis=0,
    )
    raw = model.discriminator.forward(d_in)
    clipped, mask = _clipped_logits(raw[:, 0])
    targets = np.concatenate([np.ones(batch), np.zeros(batch)])
    weights = np.concatenate([w, w])
    d_loss, d_grad = nn.bce_with_logits_grad(clipped, targets, weights)
    model.discriminator.backward((d_grad * mask)[:, None])
    d_opt.step()

    # generator pass: fresh noise, non-saturating target 1 on fakes
    noise_g = rng.standard_normal((batch, cfg.noise_dim))
    fakes_g = model.generator.forward(np.concatenate([noise_g, hot], axis=1))
    raw_g = model.discriminator.forward(np.concatenate([fakes_g, hot], axis=1))
    clipped_g, mask_g = _clipped_logits(raw_g[:, 0])
    g_loss, g_grad = nn.bce_with_logits_grad(clipped_g, np.ones(batch), w)
    d_input_grad = model.discriminator.backward((g_grad * mask_g)[:, None])
    model.generator.backward(d_input_grad[:, : cfg.data_dim])
    g_opt.step()

    if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
        raise NumericError("non-finite adversarial loss")
    return float(d_loss), float(g_loss)


@dataclass
class TrainHistory:
    d_losses: list[float] = field(default_factory=list)
    g_losses: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.d_losses)


def train(
    model: GanModel,
    data: np.ndarray,
    labels: np.ndarray,
    config: GanConfig | None = None,
    class_weight_map: dict[int, float] | None = None,
    steps: int | None = None,
) -> TrainHistory:
    """Adversarial training: ``epochs`` x ceil(N/batch) steps, seeded shuffles.

    ``steps`` caps the total step count when given (toy-task usage).
    On a non-finite loss the run aborts with a NumericError whose
    ``checkpoint`` holds the last stable parameter snapshot.
    """
    cfg = config or model.config
    cfg.validate()
    X = np.asarray(data, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValidationError("empty training set")
    if X.shape[0] != y.shape[0]:
        raise ValidationError("data/label count mismatch")
    n = X.shape[0]

    weight_vec = np.ones(cfg.num_classes)
    if class_weight_map:
        for idx, wv in class_weight_map.items():
            weight_vec[idx] = wv

    rng = np.random.default_rng(cfg.seed)
    g_opt = nn.AdamOptimizer(model.generator, cfg.learning_rate)
    d_opt = nn.AdamOptimizer(model.discriminator, cfg.learning_rate)
    history = TrainHistory()
    stable = (model.generator.param_vector(), model.discriminator.param_vector())

    steps_per_epoch = -(-n // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch if steps is None else steps
    done = 0
    epoch = 0
    while done < total:
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            if done >= total:
                break
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if idx.size == 1:
                # a singleton tail batch would break train_step; borrow one
                idx = np.concatenate([idx, order[:1]])
            try:
                d_loss, g_loss = train_step(
                    model, X[idx], y[idx], g_opt, d_opt, rng, weight_vec
                )
            except NumericError as err:
                raise NumericError(
                    f"training diverged at step {done}: {err.message}",
                    checkpoint=stable,
                ) from err
            history.d_losses.append(d_loss)
            history.g_losses.append(g_loss)
            done += 1
        epoch += 1
        stable = (model.generator.param_vector(), model.discriminator.param_vector())
    return history


def quantize_to_pixels(vec: np.ndarray) -> np.ndarray:
    """Map generator output in tanh range [-1, 1] to 8-bit pixels, clamping."""
    px = np.clip(np.rint((vec + 1.0) * 127.5), 0, 255)
    return px.astype(np.uint8).reshape(IMAGE_SIZE, IMAGE_SIZE, 3)


def synthesize_corpus(
    model: GanModel,
    per_class: int,
    seed: int,
    provenance: str = "cgan",
) -> list[ImageRecord]:
    """per_class conditioned samples per class, quantized to image records."""
    cfg = model.config
    if cfg.data_dim != IMAGE_DIM:
        raise ValidationError(
            f"corpus synthesis needs data_dim {IMAGE_DIM} (64x64x3), got {cfg.data_dim}"
        )
    if per_class < 0:
        raise ValidationError("per_class must be >= 0")
    records = []
    for class_idx, name in enumerate(CLASS_NAMES[: cfg.num_classes]):
        samples = generate(model, class_idx, per_class, seed + class_idx)
        for i in range(per_class):
            rec = ImageRecord(
                id=f"{provenance}-{name}-{seed:04d}-{i:05d}",
                pixels=quantize_to_pixels(samples[i]),
                provenance=provenance,
                class_label=name,
            )
            rec.validate()
            records.append(rec)
    return records


def save_gan(path, model: GanModel) -> None:
    cfg = model.config
    doc = {
        "format": GAN_FORMAT,
        "version": 1,
        "config": {
            "data_dim": cfg.data_dim,
            "num_classes": cfg.num_classes,
            "noise_dim": cfg.noise_dim,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "leaky_slope": cfg.leaky_slope,
            "seed": cfg.seed,
            "hidden": list(cfg.hidden),
            "generator_output": cfg.generator_output,
        },
        "generator": nn.net_to_doc(model.generator),
        "discriminator": nn.net_to_doc(model.discriminator),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_gan(path) -> GanModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != GAN_FORMAT:
        raise ValidationError(f"not a {GAN_FORMAT} file: {path}")
    raw = dict(doc["config"])
    raw["hidden"] = tuple(raw["hidden"])
    cfg = GanConfig(**raw)
    model = GanModel(
        generator=nn.net_from_doc(doc["generator"]),
        discriminator=nn.net_from_doc(doc["discriminator"]),
        config=cfg,
    )
    model.validate()
    return model


def gaussian_mixture_toy(
    n_per_class: int,
    seed: int = 0,
    modes: tuple = ((-2.0, 0.0), (2.0, 0.0)),
    sigma: float = 0.3,
) -> tuple[np.ndarray, np.ndarray]:
    """2-D labeled Gaussian-mixture data for conditioning experiments."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c, mode in enumerate(modes):
        xs.append(rng.normal(0.0, sigma, size=(n_per_class, 2)) + np.asarray(mode))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)
