"""Shared numeric primitives.

Everything downstream builds on three things defined here: vector distance
metrics, a weighted ridge least-squares solver, and a seedable random stream
that can be forked into independent child streams by label.  No code in the
package touches numpy's global RNG.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class DimensionMismatchError(ValueError):
    """Operands live in different feature spaces."""


class DegenerateVectorError(ValueError):
    """A vector that must have positive norm is numerically zero."""


class RankDeficiencyError(ValueError):
    """Normal equations are singular.  Retry with ridge > 0."""


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-d float64 array, rejecting anything else."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if v.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    if va.shape != vb.shape:
        raise DimensionMismatchError(
            f"vectors have different dimensions: {va.size} vs {vb.size}"
        )
    return va, vb


def l1_distance(a, b) -> float:
    va, vb = _paired(a, b)
    return float(np.sum(np.abs(va - vb)))


def cosine_distance(a, b) -> float:
    """1 - cos(angle(a, b)), in [0, 2].  Zero-norm inputs are an error."""
    va, vb = _paired(a, b)
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine distance undefined for zero-norm vector")
    c = float(np.dot(va, vb) / (na * nb))
    # clip fp overshoot so the result stays inside [0, 2]
    return 1.0 - max(-1.0, min(1.0, c))


@dataclass
class WlsProblem:
    """Weighted ridge least squares:

        minimize  sum_i  pi_i * (y_i - w.x_i - b)^2  +  ridge * ||w||^2

    Sample weights are normalised internally to mean 1, which makes the
    solution exactly invariant to uniform rescaling of ``weights`` even with
    ridge > 0.  The intercept is never penalised; set ``fit_intercept=False``
    to force b = 0.
    """

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    ridge: float = 0.0
    fit_intercept: bool = True

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError(f"design matrix must be 2-d, got shape {self.x.shape}")
        n, _ = self.x.shape
        if self.y.shape != (n,):
            raise DimensionMismatchError(
                f"targets have shape {self.y.shape}, expected ({n},)"
            )
        if self.weights.shape != (n,):
            raise DimensionMismatchError(
                f"weights have shape {self.weights.shape}, expected ({n},)"
            )
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("design or targets contain non-finite entries")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and non-negative")
        if float(np.sum(self.weights)) <= 0.0:
            raise ValueError("weights must not all be zero")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


def weighted_ridge_ls(problem: WlsProblem) -> tuple[np.ndarray, float]:
    """Solve the normal equations of a WlsProblem with an SPD factorization.

    Returns (w, b); b is 0.0 when fit_intercept is False.  Raises
    RankDeficiencyError when the normal equations are singular (only possible
    at ridge == 0).
    """
    n, d = problem.x.shape
    pi = problem.weights * (n / float(np.sum(problem.weights)))
    if problem.fit_intercept:
        design = np.hstack([problem.x, np.ones((n, 1))])
    else:
        design = problem.x
    wx = design * pi[:, None]
    a = design.T @ wx
    rhs = wx.T @ problem.y
    if problem.ridge > 0:
        a = a.copy()
        a[np.arange(d), np.arange(d)] += problem.ridge
    try:
        coef = cho_solve(cho_factor(a), rhs)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(
            "normal equations are singular; pass ridge > 0 to regularise"
        ) from exc
    if problem.fit_intercept:
        return coef[:d].copy(), float(coef[d])
    return coef.copy(), 0.0


_MASK64 = (1 << 64) - 1


class RandomStream:
    """Deterministic random source backed by PCG64.

    ``fork(label)`` derives an independent child stream from a string label
    by hashing (seed, label), so parallel tasks can each get their own stream
    without coordinating draw order.  Forking the same label twice yields the
    same stream; labels must be unique per task.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def fork(self, label: str) -> "RandomStream":
        digest = hashlib.sha256(f"{self.seed}/{label}".encode()).digest()
        return RandomStream(int.from_bytes(digest[:8], "little"))

    def normal(self, size=None) -> np.ndarray | float:
        return self._gen.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def bernoulli(self, p: float, size=None) -> np.ndarray:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {p}")
        return (self._gen.random(size) < p).astype(np.float64)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
