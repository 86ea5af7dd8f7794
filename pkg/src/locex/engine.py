"""The generic explanation engine.

One fitting problem covers every method in the registry: choose a linear
surrogate g minimising the expected loss between g and the black-box model
over a perturbation neighborhood of the point of interest.  The eight
registry methods are nothing but configurations of (noise family, combine
op, kernel, loss, surrogate parameterisation):

    c_lime                Gaussian additive      squared error
    smoothgrad            Gaussian additive      gradient matching
    vanilla_gradients     Gaussian, sigma -> 0   gradient matching
    integrated_gradients  scalar Uniform(0,1)    gradient matching
    grad_x_input          scalar Uniform(a,1), a -> 1
    lime                  Bernoulli masks        squared error, exp. kernel
    kernelshap            Bernoulli masks        squared error, Shapley kernel
    occlusion             one-hot masks          squared error on f(x0) - f(drop_i)

Closed forms used by ``fit_closed_form``:

  * gradient matching, surrogate of the noise: w = weighted mean of the
    cached noise-space model gradients;
  * gradient matching, surrogate of the perturbed input: the same mean
    divided coordinate-wise by the combine jacobian (1 for additive noise,
    x0 for multiplicative), which requires nonzero x0 coordinates;
  * squared error: weighted ridge least squares of the cached values on the
    noise design (or the perturbed inputs, for the reparameterised form);
  * one-hot masks with squared error: w_i is the mean drop in model value
    when feature i is removed, exactly.

``fit_iterative`` minimises the same empirical loss by minibatch SGD and
must land on the closed form when one exists; its diagnostics carry the
closed-form held-out loss so the agreement is checkable from the outside.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import RandomStream, WlsProblem, as_vector, weighted_ridge_ls
from .models import PredictiveModel
from .neighborhoods import (
    ADD,
    SCALAR_MULTIPLY,
    BernoulliMask,
    ExponentialKernel,
    GaussianAdditive,
    NeighborhoodSpec,
    OneHotMask,
    PerturbationSet,
    ShapleyKernel,
    UniformKernel,
    UniformScalarMultiplicative,
    ELEMENTWISE_MULTIPLY,
    sample_perturbations,
)

GRADIENT = "gradient"
GRADIENT_TIMES_INPUT = "gradient_times_input"

OF_NOISE = "of_noise"
OF_PERTURBED_INPUT = "of_perturbed_input"

FREE = "free"
FIXED_F0 = "fixed_f0"
ZERO = "zero"


class NoClosedFormError(ValueError):
    """The instance has no closed-form solution; use the iterative fitter."""


class FitDivergedError(RuntimeError):
    """Iterative fit hit a non-finite loss."""


@dataclass(frozen=True)
class SquaredError:
    """(f(x_xi) - g(.))^2; for one-hot masks the target is the value drop
    f(x0) - f(x0 with the hot feature removed)."""


@dataclass(frozen=True)
class GradientMatching:
    """|| d f(x_xi)/d xi - d g(.)/d xi ||^2.  Blind to the intercept, so it
    only pins down w; instances fix b = f(0)."""


@dataclass(frozen=True)
class Regularized:
    """base loss + lam * penalty(w), penalty in {l0, l1}."""

    base: SquaredError | GradientMatching
    lam: float
    penalty: str = "l0"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.penalty not in ("l0", "l1"):
            raise ValueError(f"unknown penalty {self.penalty!r}")


LossSpec = SquaredError | GradientMatching | Regularized


def _base_loss(loss: LossSpec) -> LossSpec:
    return loss.base if isinstance(loss, Regularized) else loss


def needs_gradients(loss: LossSpec) -> bool:
    return isinstance(_base_loss(loss), GradientMatching)


@dataclass(frozen=True)
class LfaInstance:
    """A fully specified local-surrogate fitting problem."""

    neighborhood: NeighborhoodSpec
    loss: LossSpec
    param: str = OF_NOISE
    intercept_rule: str = FREE
    ridge: float = 1e-8
    method: str | None = None
    shortcut: bool = False

    def __post_init__(self):
        if self.param not in (OF_NOISE, OF_PERTURBED_INPUT):
            raise ValueError(f"unknown surrogate parameterisation {self.param!r}")
        if self.intercept_rule not in (FREE, FIXED_F0, ZERO):
            raise ValueError(f"unknown intercept rule {self.intercept_rule!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if isinstance(_base_loss(self.loss), GradientMatching) and self.intercept_rule == FREE:
            raise ValueError(
                "gradient matching cannot identify a free intercept; use fixed_f0"
            )
        if (isinstance(self.neighborhood.noise, OneHotMask)
                and isinstance(_base_loss(self.loss), SquaredError)
                and self.intercept_rule == FREE):
            raise ValueError(
                "a one-hot mask design makes the intercept collinear with the "
                "mask columns; use intercept_rule='zero'"
            )
        if self.shortcut and not isinstance(_base_loss(self.loss), GradientMatching):
            raise ValueError("the analytic shortcut applies to gradient matching only")

    @property
    def scale(self) -> str:
        return GRADIENT if self.neighborhood.combine == ADD else GRADIENT_TIMES_INPUT


@dataclass
class Explanation:
    method: str
    x0: np.ndarray
    weights: np.ndarray
    intercept: float
    scale: str
    solver: str
    diagnostics: dict = field(default_factory=dict)
    instance: LfaInstance | None = None

    def to_dict(self) -> dict:
        payload = {
            "method": self.method,
            "x0": [float(v) for v in self.x0],
            "weights": [float(v) for v in self.weights],
            "intercept": float(self.intercept),
            "scale": self.scale,
            "solver": self.solver,
            "diagnostics": self.diagnostics,
        }
        if self.instance is not None:
            payload["instance"] = instance_descriptor(self.instance)
        return payload

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def instance_descriptor(instance: LfaInstance) -> dict:
    """JSON-friendly echo of every choice that defines the instance."""
    nb = instance.neighborhood
    noise = {"family": type(nb.noise).__name__, **asdict(nb.noise)}
    kernel = {"kind": type(nb.kernel).__name__, **asdict(nb.kernel)}
    loss = {"kind": type(instance.loss).__name__}
    if isinstance(instance.loss, Regularized):
        loss["base"] = type(instance.loss.base).__name__
        loss["lam"] = instance.loss.lam
        loss["penalty"] = instance.loss.penalty
    return {
        "method": instance.method,
        "noise": noise,
        "combine": nb.combine,
        "kernel": kernel,
        "n_samples": nb.n_samples,
        "loss": loss,
        "param": instance.param,
        "intercept_rule": instance.intercept_rule,
        "ridge": instance.ridge,
        "shortcut": instance.shortcut,
    }


# ------------------------------------------------------------------ registry

METHODS = (
    "c_lime",
    "smoothgrad",
    "vanilla_gradients",
    "integrated_gradients",
    "grad_x_input",
    "lime",
    "kernelshap",
    "occlusion",
)

SIGMA_MIN = 1e-6          # additive-noise width for the sigma -> 0 limit
A_NEAR_ONE = 1.0 - 1e-6   # scalar-noise lower bound for the a -> 1 limit


def registry(
    method: str,
    *,
    sigma: float = 0.1,
    low: float | None = None,
    n_samples: int = 1000,
    kernel_width: float | None = None,
    kernel_distance: str = "l2sq",
    clamp: float = 1e6,
    param: str = OF_NOISE,
    shortcut: bool | None = None,
    ridge: float = 1e-8,
) -> LfaInstance:
    """Build the LfaInstance for one of the eight registry methods."""
    if method not in METHODS:
        raise KeyError(f"unknown method {method!r}; choose from {METHODS}")

    if method in ("c_lime", "smoothgrad", "vanilla_gradients"):
        eff_sigma = SIGMA_MIN if method == "vanilla_gradients" else sigma
        nb = NeighborhoodSpec(GaussianAdditive(eff_sigma), ADD,
                              UniformKernel(), n_samples)
        if method == "c_lime":
            return LfaInstance(nb, SquaredError(), param, FREE, ridge, method)
        return LfaInstance(
            nb, GradientMatching(), param, FIXED_F0, ridge, method,
            shortcut=(method == "vanilla_gradients" if shortcut is None else shortcut),
        )

    if method in ("integrated_gradients", "grad_x_input"):
        eff_low = (A_NEAR_ONE if method == "grad_x_input" else 0.0) if low is None else low
        nb = NeighborhoodSpec(UniformScalarMultiplicative(eff_low),
                              SCALAR_MULTIPLY, UniformKernel(), n_samples)
        return LfaInstance(
            nb, GradientMatching(), param, FIXED_F0, ridge, method,
            shortcut=(method == "grad_x_input" if shortcut is None else shortcut),
        )

    if method == "lime":
        nb = NeighborhoodSpec(BernoulliMask(), ELEMENTWISE_MULTIPLY,
                              ExponentialKernel(kernel_width, kernel_distance),
                              n_samples)
        return LfaInstance(nb, SquaredError(), param, FREE, ridge, method)

    if method == "kernelshap":
        nb = NeighborhoodSpec(BernoulliMask(), ELEMENTWISE_MULTIPLY,
                              ShapleyKernel(clamp), n_samples)
        return LfaInstance(nb, SquaredError(), param, FREE, ridge, method)

    # occlusion
    nb = NeighborhoodSpec(OneHotMask(), ELEMENTWISE_MULTIPLY,
                          UniformKernel(), n_samples)
    return LfaInstance(nb, SquaredError(), param, ZERO, ridge, method)


# ------------------------------------------------------------- loss plumbing

def _combine_jacobian(instance: LfaInstance, x0: np.ndarray) -> np.ndarray:
    """d x_xi / d xi_j along its diagonal: 1 for additive noise, x0 for
    multiplicative (scalar noise seen as tied coordinates)."""
    if instance.neighborhood.combine == ADD:
        return np.ones_like(x0)
    return x0


def _se_targets(instance: LfaInstance, pset: PerturbationSet) -> np.ndarray:
    if isinstance(pset.spec.noise, OneHotMask):
        if pset.dropped_values is None:
            raise ValueError("perturbation set lacks the one-hot drop cache")
        return pset.f_x0 - pset.dropped_values
    return pset.f_values


def _se_design(instance: LfaInstance, pset: PerturbationSet) -> np.ndarray:
    if instance.param == OF_NOISE:
        return pset.noise_design()
    return pset.x


def _surrogate_gradient_noise_space(instance, x0, w):
    """d g / d xi for the linear surrogate, constant across samples."""
    if instance.param == OF_NOISE:
        return w
    return _combine_jacobian(instance, x0) * w


def empirical_loss(instance: LfaInstance, pset: PerturbationSet,
                   w: np.ndarray, b: float, indices=None) -> float:
    """Weighted mean per-sample loss of the surrogate (w, b) on the set,
    plus the penalty term for regularised losses."""
    idx = np.arange(pset.n) if indices is None else np.asarray(indices)
    pi = pset.weights[idx]
    total = float(np.sum(pi))
    if total <= 0:
        raise ValueError("selected samples have zero total weight")
    base = _base_loss(instance.loss)
    # overflow here is reported by the caller as divergence, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        if isinstance(base, SquaredError):
            design = _se_design(instance, pset)[idx]
            targets = _se_targets(instance, pset)[idx]
            resid = targets - design @ w - b
            value = float(np.sum(pi * resid * resid) / total)
        else:
            if pset.noise_grads is None:
                raise ValueError("perturbation set lacks cached gradients")
            gs = _surrogate_gradient_noise_space(instance, pset.x0, w)
            resid = pset.noise_grads[idx] - gs
            value = float(np.sum(pi * np.sum(resid * resid, axis=1)) / total)
    if isinstance(instance.loss, Regularized):
        if instance.loss.penalty == "l0":
            value += instance.loss.lam * float(np.count_nonzero(w))
        else:
            value += instance.loss.lam * float(np.sum(np.abs(w)))
    return value


def _intercept_value(instance: LfaInstance, pset: PerturbationSet) -> float:
    if instance.intercept_rule == FIXED_F0:
        return float(pset.f_zero)
    return 0.0


def _finish(instance, pset, w, b, solver, extra=None) -> Explanation:
    diag = {
        "n": pset.n,
        "ridge": instance.ridge,
        "train_loss": empirical_loss(instance, pset, w, b),
        "validation_loss": None,
        "test_loss": None,
    }
    if extra:
        diag.update(extra)
    return Explanation(
        method=instance.method or "custom",
        x0=pset.x0.copy(),
        weights=np.asarray(w, dtype=np.float64),
        intercept=float(b),
        scale=instance.scale,
        solver=solver,
        diagnostics=diag,
        instance=instance,
    )


# ---------------------------------------------------------------- closed form

def fit_closed_form(instance: LfaInstance, pset: PerturbationSet) -> Explanation:
    if isinstance(instance.loss, Regularized):
        raise NoClosedFormError(
            "regularised losses have no generic closed form here; use "
            "fit_iterative (or sparse_smoothgrad for the l0 additive case)"
        )
    pi = pset.weights
    total = float(np.sum(pi))
    if total <= 0:
        raise ValueError("perturbation weights sum to zero")

    if isinstance(instance.loss, GradientMatching):
        if pset.noise_grads is None:
            raise ValueError(
                "gradient matching needs a perturbation set sampled with "
                "need_gradients=True"
            )
        mean_grad = (pi[:, None] * pset.noise_grads).sum(axis=0) / total
        if instance.param == OF_NOISE:
            w = mean_grad
        else:
            jac = _combine_jacobian(instance, pset.x0)
            if np.any(jac == 0.0):
                raise ValueError(
                    "surrogate of the perturbed input needs nonzero x0 "
                    "coordinates under multiplicative noise"
                )
            w = mean_grad / jac
        return _finish(instance, pset, w, _intercept_value(instance, pset),
                       "closed_form")

    # squared error
    if isinstance(pset.spec.noise, OneHotMask):
        if instance.param != OF_NOISE:
            raise NoClosedFormError(
                "one-hot squared error is defined on the noise parameterisation"
            )
        d = pset.dim
        hot = np.argmax(pset.xi, axis=1)
        if set(hot.tolist()) != set(range(d)):
            raise ValueError(
                f"one-hot fit needs every coordinate sampled; use n_samples >= {d}"
            )
        targets = _se_targets(instance, pset)
        w = np.zeros(d)
        for j in range(d):
            sel = hot == j
            w[j] = float(np.sum(pi[sel] * targets[sel]) / np.sum(pi[sel]))
        return _finish(instance, pset, w, _intercept_value(instance, pset),
                       "closed_form")

    design = _se_design(instance, pset)
    targets = _se_targets(instance, pset)
    b_fixed = _intercept_value(instance, pset)
    if instance.intercept_rule == FREE:
        w, b = weighted_ridge_ls(WlsProblem(design, targets, pi, instance.ridge))
    else:
        w, _ = weighted_ridge_ls(
            WlsProblem(design, targets - b_fixed, pi, instance.ridge,
                       fit_intercept=False))
        b = b_fixed
    return _finish(instance, pset, w, b, "closed_form")


# ------------------------------------------------------------- iterative fit

@dataclass
class FitConfig:
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 0.05
    cosine_annealing: bool = True
    patience: int = 50
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def _batch_gradient(instance, pset, w, b, idx, mean_weight):
    """d loss / d (w, b) over one batch, with weights normalised to the
    training mean so the step size is insensitive to kernel scale."""
    pi = pset.weights[idx] / mean_weight
    m = idx.size
    base = _base_loss(instance.loss)
    if isinstance(base, SquaredError):
        design = _se_design(instance, pset)[idx]
        targets = _se_targets(instance, pset)[idx]
        resid = design @ w + b - targets
        gw = (2.0 / m) * (design.T @ (pi * resid))
        gb = (2.0 / m) * float(np.sum(pi * resid))
        return gw, gb
    gs = _surrogate_gradient_noise_space(instance, pset.x0, w)
    resid = gs - pset.noise_grads[idx]
    if instance.param == OF_NOISE:
        gw = (2.0 / m) * (pi[:, None] * resid).sum(axis=0)
    else:
        jac = _combine_jacobian(instance, pset.x0)
        gw = (2.0 / m) * jac * (pi[:, None] * resid).sum(axis=0)
    return gw, 0.0


def _prox(instance, w, step):
    """Proximal step for the penalty term (no-op for plain losses)."""
    if not isinstance(instance.loss, Regularized) or instance.loss.lam == 0:
        return w
    lam = instance.loss.lam
    if instance.loss.penalty == "l0":
        return np.where(w * w > 2.0 * step * lam, w, 0.0)
    return np.sign(w) * np.maximum(np.abs(w) - step * lam, 0.0)


def fit_iterative(
    instance: LfaInstance,
    model: PredictiveModel,
    x0,
    rng: RandomStream,
    cfg: FitConfig | None = None,
    pset: PerturbationSet | None = None,
) -> Explanation:
    """Minibatch SGD on the empirical loss.

    The sample set is split train/held-out by cfg.train_fraction; the
    held-out split doubles as validation and test.  Training stops when the
    held-out loss has not improved for cfg.patience epochs, and the surrogate
    returned is the iterate at the stopping epoch.  When the instance also
    has a closed form, the diagnostics carry ``closed_form_test_loss`` on the
    same held-out split for comparison.
    """
    cfg = cfg or FitConfig()
    x0 = as_vector(x0, "x0")
    if pset is None:
        pset = sample_perturbations(
            instance.neighborhood, model, x0, rng.fork("perturbations"),
            need_gradients=needs_gradients(instance.loss),
        )
    if needs_gradients(instance.loss) and pset.noise_grads is None:
        raise ValueError("gradient matching needs cached gradients in the set")

    n = pset.n
    perm = rng.fork("split").permutation(n)
    n_train = max(1, min(n - 1, int(round(cfg.train_fraction * n)))) if n > 1 else 1
    train_idx = perm[:n_train]
    heldout_idx = perm[n_train:] if n > 1 else perm[:0]
    mean_weight = float(np.mean(pset.weights[train_idx]))
    if mean_weight <= 0:
        raise ValueError("training samples have zero total weight")

    d = pset.dim
    w = np.zeros(d)
    b = _intercept_value(instance, pset)
    fit_b = instance.intercept_rule == FREE and isinstance(
        _base_loss(instance.loss), SquaredError)

    def heldout_loss(wv, bv):
        if heldout_idx.size == 0:
            return empirical_loss(instance, pset, wv, bv, train_idx)
        return empirical_loss(instance, pset, wv, bv, heldout_idx)

    batch_rng = rng.fork("batches")
    best_val = heldout_loss(w, b)
    stale = 0
    epochs_run = 0
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate
        if cfg.cosine_annealing and cfg.epochs > 1:
            lr *= 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        order = train_idx[batch_rng.permutation(n_train)]
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            gw, gb = _batch_gradient(instance, pset, w, b, idx, mean_weight)
            w = _prox(instance, w - lr * gw, lr)
            if fit_b:
                b -= lr * gb
        epochs_run = epoch + 1
        val = heldout_loss(w, b)
        if not math.isfinite(val):
            raise FitDivergedError(
                f"held-out loss became non-finite at epoch {epoch}; "
                f"lr={cfg.learning_rate}, n={n}"
            )
        # patience is a stopping rule only; the returned surrogate is the
        # iterate at the stopping epoch
        if val < best_val - 1e-15:
            best_val = val
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    val = heldout_loss(w, b)
    extra = {
        "epochs_run": epochs_run,
        "early_stopped": epochs_run < cfg.epochs,
        "n_train": int(n_train),
        "n_heldout": int(heldout_idx.size),
    }
    try:
        cf = fit_closed_form(instance, pset)
        extra["closed_form_test_loss"] = (
            empirical_loss(instance, pset, cf.weights, cf.intercept, heldout_idx)
            if heldout_idx.size else cf.diagnostics["train_loss"])
    except (NoClosedFormError, ValueError):
        pass
    out = _finish(instance, pset, w, b, "iterative", extra)
    out.diagnostics["train_loss"] = empirical_loss(instance, pset, w, b, train_idx)
    out.diagnostics["validation_loss"] = val
    out.diagnostics["test_loss"] = val
    return out


# ------------------------------------------------------------------- explain

def explain(
    model: PredictiveModel,
    x0,
    instance: LfaInstance,
    rng: RandomStream | None = None,
    solver: str = "closed_form",
    fit_cfg: FitConfig | None = None,
    pset: PerturbationSet | None = None,
) -> Explanation:
    """Run one instance end to end: sample (unless given), fit, package.

    rng may be omitted only when a perturbation set is passed in (and, for
    the iterative solver, never: it also drives the split and batch order).
    """
    needs_rng = solver == "iterative" or (pset is None
                                          and not instance.shortcut)
    if rng is None and needs_rng:
        raise ValueError("rng is required unless a pset is given "
                         "and the solver is closed_form")
    x0 = as_vector(x0, "x0")
    if solver == "iterative":
        return fit_iterative(instance, model, x0, rng, fit_cfg, pset)
    if solver != "closed_form":
        raise ValueError(f"unknown solver {solver!r}")

    if instance.shortcut and pset is None:
        grad = model.gradient(x0)
        # with the surrogate parameterized by the perturbed input the
        # multiplicative jacobian cancels and the limit is the raw gradient
        if (instance.neighborhood.combine == ADD
                or instance.param == OF_PERTURBED_INPUT):
            w = grad
        else:
            w = x0 * grad
        b = model.predict(np.zeros(x0.size))
        return Explanation(
            method=instance.method or "custom",
            x0=x0.copy(),
            weights=w,
            intercept=float(b),
            scale=instance.scale,
            solver="closed_form",
            diagnostics={"analytic_shortcut": True, "n": 0,
                         "train_loss": None, "validation_loss": None,
                         "test_loss": None, "ridge": instance.ridge},
            instance=instance,
        )

    if pset is None:
        pset = sample_perturbations(
            instance.neighborhood, model, x0, rng.fork("perturbations"),
            need_gradients=needs_gradients(instance.loss),
        )
    return fit_closed_form(instance, pset)


# --------------------------------------------------------- sparse smoothgrad

def sparse_smoothgrad(
    model: PredictiveModel,
    x0,
    sigma: float,
    lam: float,
    rng: RandomStream,
    n_samples: int = 1000,
) -> Explanation:
    """Hard-thresholded smoothed gradients.

    Minimises mean ||grad - w||^2 + 2*lam*||w||_0, whose exact separable
    minimiser keeps coordinate i of the smoothed gradient iff its square
    exceeds 2*lam.  lam = 0 reduces to the smoothgrad closed form; the
    nonzero count is nonincreasing in lam.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    x0 = as_vector(x0, "x0")
    instance = registry("smoothgrad", sigma=sigma, n_samples=n_samples)
    pset = sample_perturbations(instance.neighborhood, model, x0,
                                rng.fork("perturbations"), need_gradients=True)
    dense = fit_closed_form(instance, pset)
    w = np.where(dense.weights**2 > 2.0 * lam, dense.weights, 0.0)
    return Explanation(
        method="sparse_smoothgrad",
        x0=x0.copy(),
        weights=w,
        intercept=dense.intercept,
        scale=GRADIENT,
        solver="closed_form",
        diagnostics={
            "n": pset.n,
            "lam": lam,
            "sigma": sigma,
            "nonzeros": int(np.count_nonzero(w)),
            "dense_weights": [float(v) for v in dense.weights],
            "train_loss": None, "validation_loss": None, "test_loss": None,
            "ridge": instance.ridge,
        },
        instance=instance,
    )


# ------------------------------------------------------------ validity check

@dataclass
class ValidityReport:
    """Monte Carlo witness of the valid-loss property: expected loss zero
    iff the two functions agree on the neighborhood (up to a constant for
    losses blind to one, like gradient matching)."""

    mean_loss: float
    zero_loss: bool
    offset: float
    max_deviation: float
    agrees_up_to_offset: bool
    consistent: bool
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def loss_is_valid_check(
    loss: LossSpec,
    model_f: PredictiveModel,
    model_g: PredictiveModel,
    spec: NeighborhoodSpec,
    x0,
    rng: RandomStream,
    zero_tol: float = 1e-12,
    agree_tol: float = 1e-6,
) -> ValidityReport:
    x0 = as_vector(x0, "x0")
    base = _base_loss(loss)
    grads = isinstance(base, GradientMatching)
    ps_f = sample_perturbations(spec, model_f, x0, rng.fork("draws"), grads)
    g_values = model_g.predict_batch(ps_f.x)
    if grads:
        g_input_grads = model_g.gradient_batch(ps_f.x)
        if spec.combine == ADD:
            g_noise_grads = g_input_grads
        else:
            g_noise_grads = g_input_grads * x0
        resid = ps_f.noise_grads - g_noise_grads
        losses = np.sum(resid * resid, axis=1)
        offset = float(ps_f.f_x0 - model_g.predict(x0))
    else:
        diff = ps_f.f_values - g_values
        losses = diff * diff
        offset = 0.0
    mean_loss = float(np.mean(losses))
    max_dev = float(np.max(np.abs(ps_f.f_values - g_values - offset)))
    zero = mean_loss < zero_tol
    agrees = max_dev < agree_tol
    return ValidityReport(
        mean_loss=mean_loss,
        zero_loss=zero,
        offset=offset,
        max_deviation=max_dev,
        agrees_up_to_offset=agrees,
        consistent=(not zero) or agrees,
        n=ps_f.n,
    )
