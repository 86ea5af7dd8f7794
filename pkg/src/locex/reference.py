"""Classic attribution methods, written directly from their original
definitions.

These are deliberately independent of the engine: they do their own sampling
and solve their own least squares through numpy's lstsq (a QR/SVD route, no
ridge), so agreement with the engine's instances is a genuine cross-check
rather than two names for one code path.  Each function returns the weight
vector.
"""
from __future__ import annotations

import math

import numpy as np

from .core import RandomStream, as_vector
from .models import PredictiveModel
from .neighborhoods import shapley_mask_weight


def ref_vanilla_gradients(model: PredictiveModel, x0) -> np.ndarray:
    return model.gradient(as_vector(x0, "x0"))


def ref_grad_x_input(model: PredictiveModel, x0) -> np.ndarray:
    x0 = as_vector(x0, "x0")
    return x0 * model.gradient(x0)


def ref_smoothgrad(model: PredictiveModel, x0, sigma: float,
                   n_samples: int, rng: RandomStream) -> np.ndarray:
    """Average gradient under Gaussian input noise."""
    x0 = as_vector(x0, "x0")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    noise = sigma * rng.normal((n_samples, x0.size))
    return np.mean(model.gradient_batch(x0 + noise), axis=0)


def ref_integrated_gradients(model: PredictiveModel, x0,
                             steps: int = 1000) -> np.ndarray:
    """Left-Riemann path integral of gradients from the zero baseline."""
    x0 = as_vector(x0, "x0")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    ts = np.arange(steps) / steps
    grads = model.gradient_batch(ts[:, None] * x0)
    return x0 * np.mean(grads, axis=0)


def ref_occlusion(model: PredictiveModel, x0) -> np.ndarray:
    """Value drop when each feature is zeroed in turn."""
    x0 = as_vector(x0, "x0")
    f0 = model.predict(x0)
    w = np.zeros_like(x0)
    for i in range(x0.size):
        dropped = x0.copy()
        dropped[i] = 0.0
        w[i] = f0 - model.predict(dropped)
    return w


def _weighted_lstsq(design, targets, weights):
    """Min-norm weighted least squares with intercept, via lstsq."""
    n = design.shape[0]
    rows = np.hstack([design, np.ones((n, 1))]) * np.sqrt(weights)[:, None]
    coef, *_ = np.linalg.lstsq(rows, targets * np.sqrt(weights), rcond=None)
    return coef[:-1], float(coef[-1])


def ref_lime(model: PredictiveModel, x0, n_samples: int, rng: RandomStream,
             width: float | None = None) -> np.ndarray:
    """Binary on/off masks, exponential-kernel weights, weighted regression."""
    x0 = as_vector(x0, "x0")
    d = x0.size
    masks = rng.bernoulli(0.5, (n_samples, d))
    xs = x0 * masks
    values = model.predict_batch(xs)
    w_k = width if width is not None else 0.75 * math.sqrt(d)
    pi = np.exp(-np.sum((xs - x0) ** 2, axis=1) / w_k**2)
    weights, _ = _weighted_lstsq(masks, values, pi)
    return weights


def ref_kernelshap(model: PredictiveModel, x0, n_samples: int,
                   rng: RandomStream, clamp: float = 1e6) -> np.ndarray:
    """Binary masks weighted by the Shapley kernel (clamped at the
    otherwise-infinite endpoints), solved as plain weighted least squares so
    that only sampling differs from the engine's instance."""
    x0 = as_vector(x0, "x0")
    d = x0.size
    masks = rng.bernoulli(0.5, (n_samples, d))
    values = model.predict_batch(x0 * masks)
    ks = np.rint(masks.sum(axis=1)).astype(int)
    pi = np.array([shapley_mask_weight(int(k), d, clamp) for k in ks])
    weights, _ = _weighted_lstsq(masks, values, pi)
    return weights


def ref_clime(model: PredictiveModel, x0, sigma: float, n_samples: int,
              rng: RandomStream) -> np.ndarray:
    """Plain regression of model values on Gaussian input noise."""
    x0 = as_vector(x0, "x0")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    noise = sigma * rng.normal((n_samples, x0.size))
    values = model.predict_batch(x0 + noise)
    weights, _ = _weighted_lstsq(noise, values, np.ones(n_samples))
    return weights
