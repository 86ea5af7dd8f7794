"""Perturbation neighborhoods around a point of interest.

A neighborhood is (noise family, combine op, weighting kernel, sample count).
Sampling materialises a PerturbationSet that caches everything a surrogate
fit needs: the raw noise, the perturbed inputs, kernel weights, model values,
and (on request) model gradients mapped into noise space by the chain rule of
the combine op:

    add                  d f(x0 + xi) / d xi        =  grad_x f
    scalar_multiply      d f(xi * x0) / d xi_i      =  x0_i * grad_x f_i
    elementwise_multiply d f(x0 . xi) / d xi_i      =  x0_i * grad_x f_i

(the scalar noise is treated as a vector with tied coordinates, which is the
form the closed-form fits consume).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import as_vector, cosine_distance, DegenerateVectorError
from .models import PredictiveModel

ADD = "add"
ELEMENTWISE_MULTIPLY = "elementwise_multiply"
SCALAR_MULTIPLY = "scalar_multiply"
COMBINE_OPS = (ADD, ELEMENTWISE_MULTIPLY, SCALAR_MULTIPLY)


class InvalidPairingError(ValueError):
    """Noise family and combine op do not fit together."""


@dataclass(frozen=True)
class GaussianAdditive:
    """xi ~ Normal(0, sigma^2 I) in R^d; pairs with ``add``."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class UniformScalarMultiplicative:
    """Scalar xi ~ Uniform(low, 1); pairs with ``scalar_multiply``.

    low = 0 sweeps the whole ray from the origin to x0; low -> 1 concentrates
    all mass at x0.
    """

    low: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.low < 1.0:
            raise ValueError(f"low must be in [0, 1), got {self.low}")


@dataclass(frozen=True)
class BernoulliMask:
    """xi in {0,1}^d with independent coordinates; pairs with
    ``elementwise_multiply``.  The proposal probability stays at 0.5
    regardless of the kernel: non-uniform kernels enter as importance
    weights, not as the sampling distribution."""

    p: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must be in (0, 1), got {self.p}")


@dataclass(frozen=True)
class OneHotMask:
    """Deterministic cycle over the d one-hot vectors; pairs with
    ``elementwise_multiply``."""


NoiseFamily = GaussianAdditive | UniformScalarMultiplicative | BernoulliMask | OneHotMask

_ALLOWED_COMBINE = {
    GaussianAdditive: ADD,
    UniformScalarMultiplicative: SCALAR_MULTIPLY,
    BernoulliMask: ELEMENTWISE_MULTIPLY,
    OneHotMask: ELEMENTWISE_MULTIPLY,
}


@dataclass(frozen=True)
class UniformKernel:
    """Every sample weighs 1."""


@dataclass(frozen=True)
class ExponentialKernel:
    """w = exp(-D(x0, x_xi) / width^2).

    width=None resolves to 0.75 * sqrt(d) at evaluation time.  distance is
    squared L2 by default; with ``cosine``, a zero-norm perturbed input is
    assigned the maximal distance 2 instead of raising (the all-zero mask is
    a legitimate sample).
    """

    width: float | None = None
    distance: str = "l2sq"

    def __post_init__(self):
        if self.width is not None and not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.distance not in ("l2sq", "cosine"):
            raise ValueError(f"unknown distance {self.distance!r}")


@dataclass(frozen=True)
class ShapleyKernel:
    """w = (M - 1) / (C(M, k) * k * (M - k)) for a mask with k ones out of M.

    The kernel diverges at k = 0 and k = M; those masks get the finite clamp
    weight instead, keeping them in the regression with dominant weight.
    """

    clamp: float = 1e6

    def __post_init__(self):
        if not self.clamp > 0:
            raise ValueError(f"clamp must be positive, got {self.clamp}")


WeightKernel = UniformKernel | ExponentialKernel | ShapleyKernel


@dataclass(frozen=True)
class NeighborhoodSpec:
    noise: NoiseFamily
    combine: str
    kernel: WeightKernel = field(default_factory=UniformKernel)
    n_samples: int = 1000

    def __post_init__(self):
        if self.combine not in COMBINE_OPS:
            raise ValueError(f"unknown combine op {self.combine!r}")
        expected = _ALLOWED_COMBINE[type(self.noise)]
        if self.combine != expected:
            raise InvalidPairingError(
                f"{type(self.noise).__name__} pairs with {expected!r}, "
                f"not {self.combine!r}"
            )
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


def combine(x0, xi, op: str) -> np.ndarray:
    """Apply one perturbation to the point of interest."""
    x0 = as_vector(x0, "x0")
    if op == ADD:
        xi = as_vector(xi, "xi")
        if xi.shape != x0.shape:
            raise ValueError("additive noise must match x0's dimension")
        return x0 + xi
    if op == ELEMENTWISE_MULTIPLY:
        xi = as_vector(xi, "xi")
        if xi.shape != x0.shape:
            raise ValueError("mask must match x0's dimension")
        return x0 * xi
    if op == SCALAR_MULTIPLY:
        return float(xi) * x0
    raise ValueError(f"unknown combine op {op!r}")


def _exp_kernel_width(kernel: ExponentialKernel, d: int) -> float:
    return kernel.width if kernel.width is not None else 0.75 * math.sqrt(d)


def shapley_mask_weight(k: int, m: int, clamp: float) -> float:
    if k <= 0 or k >= m:
        return clamp
    return min((m - 1) / (math.comb(m, k) * k * (m - k)), clamp)


def kernel_weight(kernel: WeightKernel, x0, xi, x_xi) -> float:
    """Weight of one sample.  Always finite and non-negative."""
    x0 = as_vector(x0, "x0")
    if isinstance(kernel, UniformKernel):
        return 1.0
    if isinstance(kernel, ExponentialKernel):
        x_xi = as_vector(x_xi, "x_xi")
        if kernel.distance == "l2sq":
            dist = float(np.sum((x0 - x_xi) ** 2))
        else:
            try:
                dist = cosine_distance(x0, x_xi)
            except DegenerateVectorError:
                dist = 2.0
        return math.exp(-dist / _exp_kernel_width(kernel, x0.size) ** 2)
    if isinstance(kernel, ShapleyKernel):
        xi = np.asarray(xi, dtype=np.float64)
        if not np.all((xi == 0.0) | (xi == 1.0)):
            raise ValueError("Shapley kernel requires a binary mask")
        return shapley_mask_weight(int(np.sum(xi)), xi.size, kernel.clamp)
    raise TypeError(f"unknown kernel {type(kernel).__name__}")


@dataclass
class PerturbationSet:
    """Materialised neighborhood samples with cached model evaluations.

    xi has shape (n, d) for vector noise and (n,) for scalar noise.
    noise_grads holds d f / d xi per sample (chain rule already applied) and
    is None unless gradients were requested.  dropped_values caches
    f(x0 * (1 - xi)) for one-hot masks, which is what an occlusion-style fit
    consumes; it is None for other noise families.
    """

    spec: NeighborhoodSpec
    x0: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    weights: np.ndarray
    f_values: np.ndarray
    f_x0: float
    f_zero: float
    noise_grads: np.ndarray | None = None
    dropped_values: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.f_values.size

    @property
    def dim(self) -> int:
        return self.x0.size

    def noise_design(self) -> np.ndarray:
        """Noise as an (n, d) design matrix; scalar noise is broadcast to
        tied coordinates."""
        if self.xi.ndim == 2:
            return self.xi
        return np.repeat(self.xi[:, None], self.dim, axis=1)

    def to_csv(self, path) -> None:
        d = self.dim
        xi_cols = ([f"xi_{j}" for j in range(d)] if self.xi.ndim == 2 else ["xi"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", *xi_cols,
                             *[f"x_{j}" for j in range(d)], "weight", "f_value"])
            for i in range(self.n):
                xi_vals = self.xi[i] if self.xi.ndim == 2 else [self.xi[i]]
                writer.writerow([i, *[repr(float(v)) for v in xi_vals],
                                 *[repr(float(v)) for v in self.x[i]],
                                 repr(float(self.weights[i])),
                                 repr(float(self.f_values[i]))])


def _draw_noise(spec: NeighborhoodSpec, d: int, rng) -> np.ndarray:
    noise = spec.noise
    n = spec.n_samples
    if isinstance(noise, GaussianAdditive):
        return noise.sigma * rng.normal((n, d))
    if isinstance(noise, UniformScalarMultiplicative):
        return rng.uniform(noise.low, 1.0, n)
    if isinstance(noise, BernoulliMask):
        return rng.bernoulli(noise.p, (n, d))
    if isinstance(noise, OneHotMask):
        xi = np.zeros((n, d))
        xi[np.arange(n), np.arange(n) % d] = 1.0
        return xi
    raise TypeError(f"unknown noise family {type(noise).__name__}")


def _batch_weights(spec: NeighborhoodSpec, x0, xi, x) -> np.ndarray:
    kernel = spec.kernel
    n = x.shape[0]
    if isinstance(kernel, UniformKernel):
        return np.ones(n)
    if isinstance(kernel, ExponentialKernel):
        width = _exp_kernel_width(kernel, x0.size)
        if kernel.distance == "l2sq":
            dist = np.sum((x - x0) ** 2, axis=1)
        else:
            norms = np.linalg.norm(x, axis=1)
            n0 = float(np.linalg.norm(x0))
            with np.errstate(invalid="ignore", divide="ignore"):
                cos = (x @ x0) / (norms * n0)
            dist = 1.0 - np.clip(np.where(norms * n0 > 0, cos, -1.0), -1.0, 1.0)
        return np.exp(-dist / width**2)
    if isinstance(kernel, ShapleyKernel):
        ks = np.rint(np.sum(xi, axis=1)).astype(int)
        m = x0.size
        return np.array([shapley_mask_weight(int(k), m, kernel.clamp) for k in ks])
    raise TypeError(f"unknown kernel {type(kernel).__name__}")


def sample_perturbations(
    spec: NeighborhoodSpec,
    model: PredictiveModel,
    x0,
    rng,
    need_gradients: bool = False,
) -> PerturbationSet:
    """Draw spec.n_samples perturbations and cache model evaluations.

    Deterministic for a given rng state; one-hot masks consume no randomness
    at all.
    """
    x0 = as_vector(x0, "x0")
    if x0.size != model.input_dim:
        raise ValueError(
            f"x0 has dimension {x0.size}, model expects {model.input_dim}"
        )
    d = x0.size
    xi = _draw_noise(spec, d, rng)

    if spec.combine == ADD:
        x = x0 + xi
    elif spec.combine == ELEMENTWISE_MULTIPLY:
        x = x0 * xi
    else:  # scalar multiply; xi has shape (n,)
        x = xi[:, None] * x0

    weights = _batch_weights(spec, x0, xi, x)
    f_values = model.predict_batch(x)
    f_x0 = model.predict(x0)
    f_zero = model.predict(np.zeros(d))

    noise_grads = None
    if need_gradients:
        input_grads = model.gradient_batch(x)
        if spec.combine == ADD:
            noise_grads = input_grads
        else:
            noise_grads = input_grads * x0

    dropped = None
    if isinstance(spec.noise, OneHotMask):
        dropped = model.predict_batch(x0 * (1.0 - xi))

    return PerturbationSet(
        spec=spec, x0=x0, xi=xi, x=x, weights=weights, f_values=f_values,
        f_x0=f_x0, f_zero=f_zero, noise_grads=noise_grads, dropped_values=dropped,
    )
