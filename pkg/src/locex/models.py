"""Self-contained predictive model zoo.

Every explanation method in this package queries models only through
``predict`` / ``gradient`` (plus their batch forms), so the zoo carries its
own analytic input gradients and a small SGD trainer rather than depending
on an external learning framework.  ``fd_gradient`` is the finite-difference
oracle used to cross-check every analytic gradient.

Gradients of probability-output models are gradients of the probability
itself (not of the logit).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DimensionMismatchError, RandomStream, as_vector

REGRESSION = "regression"
PROBABILITY = "probability"

_ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    return z


def _act_deriv(name, z):
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "relu":
        # subgradient 0 at the kink
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        s = _sigmoid(z)
        return s * (1.0 - s)
    return np.ones_like(z)


class PredictiveModel:
    """Scalar-output differentiable model over d-dimensional inputs."""

    input_dim: int
    output_kind: str

    def predict(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def predict_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = self._check_batch(xs)
        return np.array([self.predict(row) for row in xs])

    def gradient_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = self._check_batch(xs)
        return np.stack([self.gradient(row) for row in xs])

    def _check_point(self, x) -> np.ndarray:
        v = as_vector(x, "input")
        if v.size != self.input_dim:
            raise DimensionMismatchError(
                f"model expects dimension {self.input_dim}, got {v.size}"
            )
        return v

    def _check_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"batch must have shape (n, {self.input_dim}), got {xs.shape}"
            )
        return xs


class LinearModel(PredictiveModel):
    """f(x) = w.x + b"""

    output_kind = REGRESSION

    def __init__(self, weights, intercept: float = 0.0):
        self.weights = as_vector(weights, "weights")
        self.intercept = float(intercept)
        self.input_dim = self.weights.size

    def predict(self, x) -> float:
        return float(self.weights @ self._check_point(x) + self.intercept)

    def gradient(self, x) -> np.ndarray:
        self._check_point(x)
        return self.weights.copy()

    def predict_batch(self, xs) -> np.ndarray:
        return self._check_batch(xs) @ self.weights + self.intercept

    def gradient_batch(self, xs) -> np.ndarray:
        xs = self._check_batch(xs)
        return np.broadcast_to(self.weights, xs.shape).copy()


class LogisticModel(PredictiveModel):
    """f(x) = sigmoid(w.x + b); gradient is of the probability, hence
    parallel to w at every x."""

    output_kind = PROBABILITY

    def __init__(self, weights, intercept: float = 0.0):
        self.weights = as_vector(weights, "weights")
        self.intercept = float(intercept)
        self.input_dim = self.weights.size

    def _logit(self, xs):
        return xs @ self.weights + self.intercept

    def predict(self, x) -> float:
        return float(_sigmoid(self._logit(self._check_point(x))))

    def gradient(self, x) -> np.ndarray:
        p = _sigmoid(self._logit(self._check_point(x)))
        return float(p * (1.0 - p)) * self.weights

    def predict_batch(self, xs) -> np.ndarray:
        return _sigmoid(self._logit(self._check_batch(xs)))

    def gradient_batch(self, xs) -> np.ndarray:
        p = self.predict_batch(xs)
        return (p * (1.0 - p))[:, None] * self.weights


class SinusoidModel(PredictiveModel):
    """f(x) = sum_i sin(freq_i * x_i)

    With freq_i chosen as an integer multiple of pi / x0_i the model vanishes
    on every binary on/off mask of x0, which is the stress case for
    mask-based explanation methods.
    """

    output_kind = REGRESSION

    def __init__(self, frequencies):
        self.frequencies = as_vector(frequencies, "frequencies")
        self.input_dim = self.frequencies.size

    @classmethod
    def mask_invisible(cls, x0, cycles: int = 1) -> "SinusoidModel":
        """Frequencies n*pi / x0_i, so f is exactly zero at x0, at 0, and at
        every x0 masked by a binary vector.  Requires nonzero x0."""
        x0 = as_vector(x0, "x0")
        if np.any(x0 == 0.0):
            raise ValueError("mask_invisible requires all coordinates nonzero")
        return cls(cycles * math.pi / x0)

    def predict(self, x) -> float:
        return float(np.sum(np.sin(self.frequencies * self._check_point(x))))

    def gradient(self, x) -> np.ndarray:
        x = self._check_point(x)
        return self.frequencies * np.cos(self.frequencies * x)

    def predict_batch(self, xs) -> np.ndarray:
        return np.sum(np.sin(self._check_batch(xs) * self.frequencies), axis=1)

    def gradient_batch(self, xs) -> np.ndarray:
        xs = self._check_batch(xs)
        return self.frequencies * np.cos(xs * self.frequencies)


class QuadraticModel(PredictiveModel):
    """f(x) = sum_i c_i * x_i**2, the simplest curved regression model."""

    output_kind = REGRESSION

    def __init__(self, coefficients):
        self.coefficients = as_vector(coefficients, "coefficients")
        self.input_dim = self.coefficients.size

    def predict(self, x) -> float:
        return float(np.sum(self.coefficients * self._check_point(x) ** 2))

    def gradient(self, x) -> np.ndarray:
        return 2.0 * self.coefficients * self._check_point(x)

    def predict_batch(self, xs) -> np.ndarray:
        return np.sum(self.coefficients * self._check_batch(xs) ** 2, axis=1)

    def gradient_batch(self, xs) -> np.ndarray:
        return 2.0 * self.coefficients * self._check_batch(xs)


class MlpModel(PredictiveModel):
    """Fully-connected scalar-output network.

    ``layers`` is a list of (weights (out, in), biases (out,), activation)
    triples; the final layer must have a single output unit.  A sigmoid on
    the final layer makes the model a probability model.
    """

    def __init__(self, layers):
        if not layers:
            raise ValueError("at least one layer required")
        self.layers = []
        for w, b, act in layers:
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError("layer shapes inconsistent")
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            self.layers.append((w, b, act))
        for (w_prev, _, _), (w_next, _, _) in zip(self.layers, self.layers[1:]):
            if w_next.shape[1] != w_prev.shape[0]:
                raise ValueError("consecutive layer shapes do not chain")
        if self.layers[-1][0].shape[0] != 1:
            raise ValueError("final layer must have exactly one output unit")
        self.input_dim = self.layers[0][0].shape[1]
        self.output_kind = (
            PROBABILITY if self.layers[-1][2] == "sigmoid" else REGRESSION
        )

    def _forward(self, xs):
        """Returns (activations, preactivations); activations[0] is the input."""
        acts = [xs]
        zs = []
        for w, b, act in self.layers:
            z = acts[-1] @ w.T + b
            zs.append(z)
            acts.append(_act(act, z))
        return acts, zs

    def predict(self, x) -> float:
        x = self._check_point(x)
        acts, _ = self._forward(x[None, :])
        return float(acts[-1][0, 0])

    def predict_batch(self, xs) -> np.ndarray:
        acts, _ = self._forward(self._check_batch(xs))
        return acts[-1][:, 0]

    def gradient(self, x) -> np.ndarray:
        return self.gradient_batch(self._check_point(x)[None, :])[0]

    def gradient_batch(self, xs) -> np.ndarray:
        xs = self._check_batch(xs)
        _, zs = self._forward(xs)
        # reverse sweep of d output / d input
        delta = _act_deriv(self.layers[-1][2], zs[-1])
        for i in range(len(self.layers) - 1, 0, -1):
            w = self.layers[i][0]
            delta = (delta @ w) * _act_deriv(self.layers[i - 1][2], zs[i - 1])
        return delta @ self.layers[0][0]

    def parameter_gradients(self, xs, dloss_dout):
        """Backprop dloss/dparams for a batch; dloss_dout has shape (n, 1).
        Used by the trainer; returns a list of (dW, db) per layer."""
        acts, zs = self._forward(xs)
        grads = [None] * len(self.layers)
        delta = dloss_dout * _act_deriv(self.layers[-1][2], zs[-1])
        for i in range(len(self.layers) - 1, -1, -1):
            grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.layers[i][0]) * _act_deriv(
                    self.layers[i - 1][2], zs[i - 1]
                )
        return grads


# ------------------------------------------------------------------ training

@dataclass
class Architecture:
    """kind: linear | logistic | mlp.  Hidden layout applies to mlp only."""

    kind: str = "mlp"
    hidden_layers: int = 3
    hidden_units: int = 8
    activation: str = "tanh"
    output: str = REGRESSION

    def __post_init__(self):
        if self.kind not in ("linear", "logistic", "mlp"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output not in (REGRESSION, PROBABILITY):
            raise ValueError(f"unknown output kind {self.output!r}")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 0.05
    cosine_annealing: bool = True
    seed: int = 0


@dataclass
class TrainResult:
    model: PredictiveModel
    epoch_losses: list[float] = field(default_factory=list)


def _init_mlp(arch: Architecture, d: int, rng: RandomStream) -> MlpModel:
    sizes = [d] + [arch.hidden_units] * arch.hidden_layers + [1]
    acts = [arch.activation] * arch.hidden_layers + [
        "sigmoid" if arch.output == PROBABILITY else "identity"
    ]
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], acts):
        w = rng.normal((fan_out, fan_in)) / math.sqrt(fan_in)
        layers.append((w, np.zeros(fan_out), act))
    return MlpModel(layers)


def train_sgd(x, y, architecture: Architecture, cfg: TrainConfig) -> TrainResult:
    """Minibatch SGD with optional cosine-annealed learning rate.

    Regression architectures minimise mean squared error; probability
    architectures minimise binary cross-entropy.  Fully deterministic for a
    fixed cfg.seed: initialisation and batch order come from one stream.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("x must be (n, d) and y (n,)")
    n, d = x.shape
    if n < 1:
        raise ValueError("empty training set")

    rng = RandomStream(cfg.seed)
    if architecture.kind == "linear":
        arch = Architecture("mlp", hidden_layers=0, output=REGRESSION)
    elif architecture.kind == "logistic":
        arch = Architecture("mlp", hidden_layers=0, output=PROBABILITY)
    else:
        arch = architecture
    net = _init_mlp(arch, d, rng.fork("init"))

    probability = arch.output == PROBABILITY
    order_rng = rng.fork("batches")
    losses = []
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate
        if cfg.cosine_annealing and cfg.epochs > 1:
            lr *= 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        perm = order_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            m = len(idx)
            pred = net.predict_batch(xb)
            if probability:
                eps = 1e-12
                epoch_loss -= float(
                    np.sum(yb * np.log(pred + eps) + (1 - yb) * np.log(1 - pred + eps))
                )
                # with a sigmoid output, dBCE/dz = (p - y)
                dout = (pred - yb)[:, None] / m
                grads = _bce_parameter_gradients(net, xb, dout)
            else:
                resid = pred - yb
                epoch_loss += float(np.sum(resid * resid))
                dout = (2.0 * resid / m)[:, None]
                grads = net.parameter_gradients(xb, dout)
            for (w, b, _), (dw, db) in zip(net.layers, grads):
                w -= lr * dw
                b -= lr * db
        losses.append(epoch_loss / n)

    if architecture.kind == "linear":
        w, b, _ = net.layers[0]
        return TrainResult(LinearModel(w[0].copy(), float(b[0])), losses)
    if architecture.kind == "logistic":
        w, b, _ = net.layers[0]
        return TrainResult(LogisticModel(w[0].copy(), float(b[0])), losses)
    return TrainResult(net, losses)


def _bce_parameter_gradients(net: MlpModel, xs, dloss_dz):
    """Parameter gradients when dloss/dz at the sigmoid output is given
    directly (numerically stabler than dividing by sigma')."""
    acts, zs = net._forward(xs)
    grads = [None] * len(net.layers)
    delta = dloss_dz
    for i in range(len(net.layers) - 1, -1, -1):
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ net.layers[i][0]) * _act_deriv(
                net.layers[i - 1][2], zs[i - 1]
            )
    return grads


# ------------------------------------------------------------ gradient oracle

def fd_gradient(model: PredictiveModel, x, h: float = 1e-5) -> np.ndarray:
    """Central finite differences with per-coordinate relative step
    max(h * |x_i|, 1e-7)."""
    x = as_vector(x, "x")
    if h <= 0:
        raise ValueError("h must be positive")
    g = np.zeros_like(x)
    for i in range(x.size):
        step = max(h * abs(x[i]), 1e-7)
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (model.predict(hi) - model.predict(lo)) / (2.0 * step)
    return g


# ------------------------------------------------------------- serialization

def _enc(a) -> object:
    """Floats as shortest round-trip decimal strings (exact for binary64)."""
    if isinstance(a, (float, np.floating)):
        return repr(float(a))
    return [_enc(v) for v in a]


def _dec(a) -> object:
    if isinstance(a, str):
        return float(a)
    return [_dec(v) for v in a]


def model_to_dict(model: PredictiveModel) -> dict:
    if isinstance(model, LinearModel):
        return {"kind": "linear", "weights": _enc(model.weights),
                "intercept": _enc(model.intercept)}
    if isinstance(model, LogisticModel):
        return {"kind": "logistic", "weights": _enc(model.weights),
                "intercept": _enc(model.intercept)}
    if isinstance(model, SinusoidModel):
        return {"kind": "sinusoid", "frequencies": _enc(model.frequencies)}
    if isinstance(model, QuadraticModel):
        return {"kind": "quadratic", "coefficients": _enc(model.coefficients)}
    if isinstance(model, MlpModel):
        return {"kind": "mlp", "layers": [
            {"weights": _enc(w), "biases": _enc(b), "activation": act}
            for w, b, act in model.layers]}
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(payload: dict) -> PredictiveModel:
    kind = payload.get("kind")
    if kind == "linear":
        return LinearModel(_dec(payload["weights"]), _dec(payload["intercept"]))
    if kind == "logistic":
        return LogisticModel(_dec(payload["weights"]), _dec(payload["intercept"]))
    if kind == "sinusoid":
        return SinusoidModel(_dec(payload["frequencies"]))
    if kind == "quadratic":
        return QuadraticModel(_dec(payload["coefficients"]))
    if kind == "mlp":
        layers = [
            (np.array(_dec(l["weights"])), np.array(_dec(l["biases"])), l["activation"])
            for l in payload["layers"]
        ]
        return MlpModel(layers)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model: PredictiveModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True))


def load_model(path) -> PredictiveModel:
    return model_from_dict(json.loads(Path(path).read_text()))
