"""Minimal deterministic dense-network substrate.

Everything is float64 and seeded: identical seeds and inputs give
bit-identical results across runs. The network topology is a fixed chain of
dense layers, so reverse-mode gradients are computed from per-layer cached
forward values instead of a general tape.

Activation tags: ``leaky_relu``, ``sigmoid``, ``tanh``, ``identity``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, StateError, ValidationError

ACTIVATIONS = ("leaky_relu", "sigmoid", "tanh", "identity")

DEFAULT_HIDDEN = (128, 256, 256, 128)  # completes the five linear stages

CHECKPOINT_FORMAT = "cytoprobe-densenet"
CHECKPOINT_VERSION = 1


@dataclass
class Tensor:
    """Dense array with an optional gradient slot.

    ``values`` is the flat float64 buffer; ``shape`` is the logical shape.
    """

    shape: tuple[int, ...]
    values: np.ndarray
    grad: np.ndarray | None = None

    @classmethod
    def of(cls, array) -> "Tensor":
        arr = np.asarray(array, dtype=np.float64)
        return cls(shape=tuple(arr.shape), values=arr.reshape(-1).copy())

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    @property
    def size(self) -> int:
        return self.values.size

    def validate(self) -> None:
        expected = int(np.prod(self.shape)) if self.shape else 1
        if self.values.size != expected:
            raise ShapeError(
                f"tensor values length {self.values.size} != product(shape) {expected}",
                shape=self.shape,
            )
        if self.grad is not None and self.grad.size != self.values.size:
            raise ShapeError(
                f"grad length {self.grad.size} != values length {self.values.size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NumericError("tensor holds non-finite values")


@dataclass
class Layer:
    """One dense stage: ``act(x @ W + b)``."""

    weight: Tensor  # (in_dim, out_dim)
    bias: Tensor  # (out_dim,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def _apply_activation(z: np.ndarray, tag: str, slope: float) -> np.ndarray:
    if tag == "identity":
        return z
    if tag == "leaky_relu":
        return np.where(z >= 0.0, z, slope * z)
    if tag == "tanh":
        return np.tanh(z)
    if tag == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0.0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    raise ValidationError(f"unknown activation tag: {tag!r}")


def _activation_grad(z: np.ndarray, a: np.ndarray, tag: str, slope: float) -> np.ndarray:
    """d act(z) / dz, reusing the cached output ``a`` where that is cheaper."""
    if tag == "identity":
        return np.ones_like(z)
    if tag == "leaky_relu":
        return np.where(z >= 0.0, 1.0, slope)
    if tag == "tanh":
        return 1.0 - a * a
    if tag == "sigmoid":
        return a * (1.0 - a)
    raise ValidationError(f"unknown activation tag: {tag!r}")


class DenseNet:
    """Chain of dense layers with cached forward values for backward."""

    def __init__(self, layers: list[Layer], leaky_slope: float = 0.2):
        if not layers:
            raise ValidationError("a net needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValidationError(f"layer {i}: unknown activation {layer.activation!r}")
            if i > 0 and layers[i - 1].out_dim != layer.in_dim:
                raise ShapeError(
                    f"layer {i - 1} out-dim {layers[i - 1].out_dim} != "
                    f"layer {i} in-dim {layer.in_dim}"
                )
        self.layers = layers
        self.leaky_slope = float(leaky_slope)
        self._cache: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None
        self._cache_single = False

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Run the chain on ``x`` of shape (in_dim,) or (batch, in_dim).

        Intermediates are cached for :meth:`backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"input shape {x.shape} incompatible with first-layer in-dim {self.in_dim}"
            )
        cache = []
        a = x
        for i, layer in enumerate(self.layers):
            z = a @ layer.weight.array + layer.bias.array
            out = _apply_activation(z, layer.activation, self.leaky_slope)
            if not np.all(np.isfinite(out)):
                raise NumericError(f"non-finite activation after layer {i}")
            cache.append((a, z, out))
            a = out
        self._cache = cache
        self._cache_single = single
        return a[0] if single else a

    def backward(self, out_grad: np.ndarray) -> np.ndarray:
        """Chain-rule pass filling every parameter's grad slot.

        ``out_grad`` is dLoss/d(output) with the same shape the last forward
        returned. Returns dLoss/d(input).
        """
        if self._cache is None:
            raise StateError("backward requires a cached forward pass")
        g = np.asarray(out_grad, dtype=np.float64)
        if self._cache_single:
            g = g[None, :]
        if g.shape != self._cache[-1][2].shape:
            raise ShapeError(
                f"loss grad shape {g.shape} != forward output shape {self._cache[-1][2].shape}"
            )
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            a_in, z, a_out = self._cache[i]
            gz = g * _activation_grad(z, a_out, layer.activation, self.leaky_slope)
            layer.weight.grad = (a_in.T @ gz).reshape(-1)
            layer.bias.grad = gz.sum(axis=0)
            g = gz @ layer.weight.array.T
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite input gradient")
        return g[0] if self._cache_single else g

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.values for p in self.parameters()])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params:
            raise ShapeError(f"expected {self.num_params} params, got {vec.size}")
        i = 0
        for p in self.parameters():
            p.values[:] = vec[i : i + p.size]
            i += p.size

    def grad_vector(self) -> np.ndarray:
        grads = []
        for p in self.parameters():
            if p.grad is None:
                raise StateError("parameter has no gradient; run backward first")
            grads.append(p.grad.reshape(-1))
        return np.concatenate(grads)

    def copy(self) -> "DenseNet":
        layers = [
            Layer(
                weight=Tensor(l.weight.shape, l.weight.values.copy()),
                bias=Tensor(l.bias.shape, l.bias.values.copy()),
                activation=l.activation,
            )
            for l in self.layers
        ]
        return DenseNet(layers, leaky_slope=self.leaky_slope)


def init_dense(
    dims: list[int] | tuple[int, ...],
    activations: list[str] | None = None,
    *,
    leaky_slope: float = 0.2,
    seed: int = 0,
) -> DenseNet:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    ``dims`` chains layer sizes: dims[0] is the input dim, dims[-1] the
    output dim. Default activations are leaky_relu everywhere except an
    identity final layer.
    """
    if len(dims) < 2:
        raise ValidationError("dims needs at least an input and an output size")
    n_layers = len(dims) - 1
    if activations is None:
        activations = ["leaky_relu"] * (n_layers - 1) + ["identity"]
    if len(activations) != n_layers:
        raise ValidationError(f"need {n_layers} activation tags, got {len(activations)}")
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(n_layers):
        fan_in = dims[i]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, dims[i + 1]))
        b = rng.uniform(-bound, bound, size=dims[i + 1])
        layers.append(
            Layer(weight=Tensor.of(w), bias=Tensor.of(b), activation=activations[i])
        )
    return DenseNet(layers, leaky_slope=leaky_slope)


def five_stage(
    in_dim: int,
    out_dim: int,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    *,
    final_activation: str = "identity",
    leaky_slope: float = 0.2,
    seed: int = 0,
) -> DenseNet:
    """Default topology: five alternating linear / LeakyReLU stages."""
    dims = [in_dim, *hidden, out_dim]
    acts = ["leaky_relu"] * len(hidden) + [final_activation]
    return init_dense(dims, acts, leaky_slope=leaky_slope, seed=seed)


def forward(net: DenseNet, input: Tensor) -> Tensor:
    """Tensor-in/Tensor-out wrapper over :meth:`DenseNet.forward`."""
    out = net.forward(input.array)
    return Tensor.of(out)


def backward(net: DenseNet, loss_grad: Tensor) -> list[Tensor]:
    """Fill parameter grads from dLoss/d(output); returns the parameters."""
    net.backward(loss_grad.array)
    return net.parameters()


# ---------------------------------------------------------------------------
# losses


def _coerce(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.array.reshape(-1)
    return np.asarray(x, dtype=np.float64).reshape(-1)


def bce_with_logits(logits, targets, weights=None) -> float:
    """Weighted binary cross entropy straight from logits.

    Stable log-sum-exp form: per element
        l = max(z, 0) - z*t + log(1 + exp(-|z|))
    which never materializes sigmoid(z) alone and stays finite for
    |z| up to 1e6 and beyond. Returns the weighted mean
    ``sum(w*l) / sum(w)``.
    """
    loss, _ = bce_with_logits_grad(logits, targets, weights)
    return loss


def bce_with_logits_grad(logits, targets, weights=None) -> tuple[float, np.ndarray]:
    """As :func:`bce_with_logits` but also returns dLoss/dlogits."""
    z = _coerce(logits)
    t = _coerce(targets)
    if weights is None:
        w = np.ones_like(z)
    else:
        w = _coerce(weights)
    if not (z.size == t.size == w.size):
        raise ShapeError(
            f"length mismatch: logits {z.size}, targets {t.size}, weights {w.size}"
        )
    if z.size == 0:
        raise ValidationError("empty loss input")
    if np.any((t < 0.0) | (t > 1.0)):
        raise ValidationError("targets must lie in [0, 1]")
    if np.any(w <= 0.0):
        raise ValidationError("weights must be positive")
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    wsum = w.sum()
    loss = float((w * per).sum() / wsum)
    sig = _apply_activation(z, "sigmoid", 0.0)
    grad = w * (sig - t) / wsum
    if not np.isfinite(loss):
        raise NumericError("non-finite BCE loss")
    return loss, grad


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments over one flat parameter vector."""

    step: int
    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.0002

    @classmethod
    def fresh(cls, n_params: int, learning_rate: float = 0.0002, **kw) -> "AdamState":
        return cls(
            step=0,
            m=np.zeros(n_params, dtype=np.float64),
            v=np.zeros(n_params, dtype=np.float64),
            learning_rate=learning_rate,
            **kw,
        )


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if p.size != g.size or p.size != state.m.size:
        raise ShapeError(
            f"param/grad/state length mismatch: {p.size}/{g.size}/{state.m.size}"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class AdamOptimizer:
    """Adam bound to one net's flat parameter vector."""

    def __init__(self, net: DenseNet, learning_rate: float = 0.0002, **kw):
        self.net = net
        self.state = AdamState.fresh(net.num_params, learning_rate, **kw)

    def step(self) -> None:
        new = adam_step(self.net.param_vector(), self.net.grad_vector(), self.state)
        if not np.all(np.isfinite(new)):
            raise NumericError("non-finite parameters after Adam step")
        self.net.set_param_vector(new)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    worst_param: int
    tolerance: float
    passed: bool


class SquaredErrorLoss:
    """0.5 * sum((out - target)^2); callable -> (value, grad_wrt_out)."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, out: np.ndarray) -> tuple[float, np.ndarray]:
        diff = out - self.target
        return 0.5 * float((diff * diff).sum()), diff


GRAD_CHECK_MAX_PARAMS = 10_000


def grad_check(
    net: DenseNet,
    loss,
    tolerance: float,
    input: np.ndarray | None = None,
    *,
    seed: int = 0,
    step: float = 1e-5,
    kink_margin: float = 1e-3,
) -> GradCheckReport:
    """Compare backward gradients to central finite differences per parameter.

    ``loss`` maps the net output to ``(value, grad_wrt_output)``. When no
    input is given one is sampled N(0,1), resampling until every leaky_relu
    pre-activation sits at least ``kink_margin`` away from its kink (central
    differences are meaningless across the kink).

    Relative errors use a hybrid denominator max(|analytic|, |numeric|, 1e-6):
    a central difference of an O(1) loss at step 1e-5 carries ~1e-11 of
    cancellation noise, so gradients below a micro-unit are compared
    absolutely at that scale.
    """
    if net.num_params > GRAD_CHECK_MAX_PARAMS:
        raise ValidationError(
            f"grad_check is desk-scale only: {net.num_params} params > {GRAD_CHECK_MAX_PARAMS}"
        )
    rng = np.random.default_rng(seed)
    if input is None:
        for _ in range(200):
            x = rng.standard_normal(net.in_dim)
            net.forward(x)
            margins = [
                np.min(np.abs(z))
                for (_, z, _), layer in zip(net._cache, net.layers)
                if layer.activation == "leaky_relu"
            ]
            if not margins or min(margins) >= kink_margin:
                break
        else:
            raise ValidationError("could not sample an input clear of activation kinks")
    else:
        x = np.asarray(input, dtype=np.float64)

    out = net.forward(x)
    value, out_grad = loss(out)
    if not np.isfinite(value):
        raise NumericError("non-finite loss value in grad_check")
    net.backward(out_grad)
    analytic = net.grad_vector()

    theta = net.param_vector()
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        net.set_param_vector(theta)
        up, _ = loss(net.forward(x))
        theta[i] = orig - step
        net.set_param_vector(theta)
        down, _ = loss(net.forward(x))
        theta[i] = orig
        numeric[i] = (up - down) / (2.0 * step)
    net.set_param_vector(theta)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_rel_error=float(rel[worst]),
        mean_rel_error=float(rel.mean()),
        worst_param=worst,
        tolerance=tolerance,
        passed=bool(rel[worst] < tolerance),
    )


# ---------------------------------------------------------------------------
# checkpoints


def net_to_doc(net: DenseNet) -> dict:
    """JSON-ready layout: per layer the shape first, then row-major values."""
    return {
        "leaky_slope": net.leaky_slope,
        "layers": [
            {
                "activation": layer.activation,
                "shape": [layer.in_dim, layer.out_dim],
                "weight": layer.weight.values.tolist(),
                "bias": layer.bias.values.tolist(),
            }
            for layer in net.layers
        ],
    }


def net_from_doc(doc: dict) -> DenseNet:
    layers = []
    for i, spec in enumerate(doc["layers"]):
        in_dim, out_dim = spec["shape"]
        w = np.asarray(spec["weight"], dtype=np.float64)
        b = np.asarray(spec["bias"], dtype=np.float64)
        if w.size != in_dim * out_dim or b.size != out_dim:
            raise ShapeError(f"layer {i}: value count does not match declared shape")
        layers.append(
            Layer(
                weight=Tensor(shape=(in_dim, out_dim), values=w),
                bias=Tensor(shape=(out_dim,), values=b),
                activation=spec["activation"],
            )
        )
    # DenseNet validates the shape chain on construction
    return DenseNet(layers, leaky_slope=doc.get("leaky_slope", 0.2))


def save_checkpoint(path, net: DenseNet, meta: dict | None = None) -> None:
    """Versioned JSON checkpoint for a single net."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        **net_to_doc(net),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[DenseNet, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {doc.get('version')}")
    return net_from_doc(doc), doc.get("meta", {})
