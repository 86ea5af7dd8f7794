"""Harnesses that turn the framework's claims into executable checks.

Four of them:

* model recovery: on a linear model, additive-noise instances should return
  the model's own weights, multiplicative and mask instances the weights
  scaled by the point, and on the mask-invisible sinusoid every mask
  instance should return zeros; reparameterizing the surrogate in the
  perturbed input repairs the multiplicative cases.
* surrogate-class distance and the adversarial-neighborhood construction:
  however well a linear surrogate fits near a point, some other neighborhood
  makes its loss at least the best-possible sup-norm distance to the class.
* method matrix: each engine instance against the eight independently coded
  classics, under shared noise streams.
* perturbation tests: delete the bottom-k features per attribution and
  measure the prediction change, with deterministic zeroing or Gaussian
  jitter.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .core import (
    DegenerateVectorError,
    RandomStream,
    as_vector,
    cosine_distance,
    l1_distance,
)
from .engine import (
    ADD,
    FREE,
    METHODS,
    OF_PERTURBED_INPUT,
    LfaInstance,
    SquaredError,
    explain,
    needs_gradients,
    registry,
)
from .models import (
    LinearModel,
    LogisticModel,
    PredictiveModel,
    SinusoidModel,
)
from .neighborhoods import (
    GaussianAdditive,
    NeighborhoodSpec,
    UniformKernel,
    sample_perturbations,
)
from .reference import (
    ref_clime,
    ref_grad_x_input,
    ref_integrated_gradients,
    ref_kernelshap,
    ref_lime,
    ref_occlusion,
    ref_smoothgrad,
    ref_vanilla_gradients,
)

# instances grouped by the scale their weights live on
GRADIENT_SCALE_METHODS = ("c_lime", "smoothgrad", "vanilla_gradients")
INPUT_SCALE_METHODS = ("integrated_gradients", "grad_x_input", "lime",
                       "kernelshap", "occlusion")
MASK_METHODS = ("lime", "kernelshap", "occlusion")

TAU_GRADIENT_SCALE = 1e-3
TAU_INPUT_SCALE = 1e-2
TAU_ZERO = 1e-8


# ------------------------------------------------------------ model recovery

@dataclass
class RecoveryReport:
    method: str
    family: str
    x0: np.ndarray
    target_kind: str  # "weights" | "weights_times_x0" | "zero"
    target: np.ndarray
    weights: np.ndarray
    l1: float
    rel_l1: float | None
    cosine: float | None
    tau: float
    recovered: bool

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "family": self.family,
            "x0": self.x0.tolist(),
            "target_kind": self.target_kind,
            "target": self.target.tolist(),
            "weights": self.weights.tolist(),
            "l1": self.l1,
            "rel_l1": self.rel_l1,
            "cosine": self.cosine,
            "tau": self.tau,
            "recovered": self.recovered,
        }


def _distances(weights, target):
    l1 = l1_distance(weights, target)
    t_norm = float(np.sum(np.abs(target)))
    rel = l1 / t_norm if t_norm > 0 else None
    try:
        cos = cosine_distance(weights, target)
    except DegenerateVectorError:
        cos = None
    return l1, rel, cos


def check_recovery(
    model: PredictiveModel,
    x0,
    method: str,
    rng: RandomStream,
    n_samples: int = 1000,
    sigma: float = 0.1,
    tau: float | None = None,
) -> RecoveryReport:
    """Fit one registry instance and compare the weights to what the model
    family says they should be.

    Linear models: additive-noise instances target the model weights,
    multiplicative and mask instances target weights * x0.  Logistic models
    are judged by direction only (the gradient is a positive scalar times
    the weights).  The mask-invisible sinusoid targets all-zero weights and
    accepts only mask instances.
    """
    x0 = as_vector(x0, "x0")
    if method not in METHODS:
        raise KeyError(f"unknown method {method!r}")

    if isinstance(model, SinusoidModel):
        if method not in MASK_METHODS:
            raise ValueError(
                "the mask-invisible sinusoid check applies to mask "
                f"instances {MASK_METHODS}, not {method!r}")
        family, target_kind = "sinusoid", "zero"
        target = np.zeros_like(x0)
    elif isinstance(model, LinearModel):
        family = "linear"
    elif isinstance(model, LogisticModel):
        family = "logistic"
    else:
        raise ValueError(
            "recovery targets are defined for linear, logistic and "
            f"sinusoid models, not {type(model).__name__}")

    if family in ("linear", "logistic"):
        if method in GRADIENT_SCALE_METHODS:
            target_kind, target = "weights", model.weights.copy()
        else:
            target_kind, target = "weights_times_x0", model.weights * x0

    exp = explain(model, x0, registry(method, sigma=sigma,
                                      n_samples=n_samples), rng=rng)
    l1, rel, cos = _distances(exp.weights, target)

    if tau is None:
        if target_kind == "zero":
            tau = TAU_ZERO
        elif method in GRADIENT_SCALE_METHODS:
            tau = TAU_GRADIENT_SCALE
        else:
            tau = TAU_INPUT_SCALE

    if target_kind == "zero":
        recovered = bool(np.max(np.abs(exp.weights)) < tau)
    elif family == "logistic":
        # scale is p(1-p) at the point; only the direction is recoverable
        recovered = cos is not None and cos < tau
    else:
        recovered = rel is not None and rel < tau

    return RecoveryReport(method, family, x0.copy(), target_kind, target,
                          exp.weights, l1, rel, cos, tau, recovered)


def reparam_recovery_check(
    model: LinearModel,
    x0,
    method: str,
    rng: RandomStream,
    n_samples: int = 1000,
) -> RecoveryReport:
    """Refit a multiplicative instance with the surrogate parameterized by
    the perturbed input; on a linear model this recovers the raw weights."""
    x0 = as_vector(x0, "x0")
    if method not in INPUT_SCALE_METHODS or method == "occlusion":
        raise ValueError(
            "reparameterization applies to the multiplicative instances "
            "integrated_gradients, grad_x_input, lime and kernelshap")
    if not isinstance(model, LinearModel):
        raise ValueError("the reparameterized target is defined for linear "
                         "models")
    if np.any(x0 == 0.0):
        raise DegenerateVectorError(
            "x0 must be nonzero in every coordinate: a zero coordinate "
            "makes the multiplicative design degenerate")

    inst = registry(method, n_samples=n_samples, param=OF_PERTURBED_INPUT,
                    shortcut=False)
    exp = explain(model, x0, inst, rng=rng)
    target = model.weights.copy()
    l1, rel, cos = _distances(exp.weights, target)
    recovered = rel is not None and rel < TAU_GRADIENT_SCALE
    return RecoveryReport(method, "linear", x0.copy(), "weights", target,
                          exp.weights, l1, rel, cos, TAU_GRADIENT_SCALE,
                          recovered)


# ----------------------------------------- distance to the surrogate class

@dataclass(frozen=True)
class SearchConfig:
    """Budgets for the min-max search over (surrogate, worst point)."""
    grid_1d: int = 4001
    grid_2d: int = 201
    random_points: int = 10000
    ascent_steps: int = 60
    ascent_rate: float = 0.02
    refine_top: int = 10
    restarts: int = 5
    rounds: int = 60
    rel_gap: float = 1e-4


@dataclass
class ClassDistance:
    d_hat: float
    weights: np.ndarray
    intercept: float
    x_worst: np.ndarray
    converged: bool
    rounds_used: int

    def to_dict(self) -> dict:
        return {
            "d_hat": self.d_hat,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "x_worst": self.x_worst.tolist(),
            "converged": self.converged,
            "rounds_used": self.rounds_used,
        }


def _as_box(domain, d: int) -> np.ndarray:
    box = np.asarray(domain, dtype=np.float64)
    if box.shape != (d, 2) or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError(f"domain must be a ({d}, 2) array of (low, high) "
                         "pairs with low < high")
    return box


def _residual(model, w, b, xs):
    return model.predict_batch(xs) - xs @ w - b


def _grid_points(box: np.ndarray, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def max_abs_residual(
    model: PredictiveModel,
    w,
    b: float,
    box,
    cfg: SearchConfig = SearchConfig(),
    rng: RandomStream | None = None,
):
    """Worst point for |f(x) - w.x - b| over the box: dense grid up to two
    dimensions, otherwise random search plus projected gradient ascent.
    Returns (x_worst, value)."""
    w = as_vector(w, "w")
    box = _as_box(box, w.size)
    d = w.size
    if d <= 2:
        xs = _grid_points(box, cfg.grid_1d if d == 1 else cfg.grid_2d)
        vals = np.abs(_residual(model, w, b, xs))
        i = int(np.argmax(vals))
        return xs[i], float(vals[i])

    if rng is None:
        raise ValueError("rng is required for the random search above two "
                         "dimensions")
    xs = rng.uniform(0.0, 1.0, (cfg.random_points, d))
    xs = box[:, 0] + xs * (box[:, 1] - box[:, 0])
    vals = np.abs(_residual(model, w, b, xs))
    top = np.argsort(vals)[-cfg.refine_top:]
    best_x, best_v = xs[top[-1]].copy(), float(vals[top[-1]])
    for i in top:
        x = xs[i].copy()
        for _ in range(cfg.ascent_steps):
            r = float(model.predict(x) - float(x @ w) - b)
            step = np.sign(r) * (model.gradient(x) - w)
            x = np.clip(x + cfg.ascent_rate * step, box[:, 0], box[:, 1])
        v = abs(float(model.predict(x) - float(x @ w) - b))
        if v > best_v:
            best_x, best_v = x, v
    return best_x, best_v


def _chebyshev_fit(xs: np.ndarray, fs: np.ndarray):
    """Linear surrogate minimizing the max absolute residual on a finite
    point set, as a linear program in (w, b, t)."""
    n, d = xs.shape
    c = np.zeros(d + 2)
    c[-1] = 1.0
    a_ub = np.block([
        [xs, np.ones((n, 1)), -np.ones((n, 1))],
        [-xs, -np.ones((n, 1)), -np.ones((n, 1))],
    ])
    b_ub = np.concatenate([fs, -fs])
    bounds = [(None, None)] * (d + 1) + [(0.0, None)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"surrogate fit LP failed: {res.message}")
    return res.x[:d], float(res.x[d]), float(res.x[d + 1])


def estimate_class_distance(
    model: PredictiveModel,
    domain,
    cfg: SearchConfig = SearchConfig(),
    rng: RandomStream | None = None,
) -> ClassDistance:
    """min over linear surrogates of the max absolute error on the box.

    Alternates a finite-set Chebyshev fit with a search for the current
    surrogate's worst point, growing the point set until the worst value
    stops exceeding the fit value (a standard exchange scheme).  Restarts
    with fresh random seed sets and keeps the best surrogate found.
    """
    d = model.input_dim
    box = _as_box(domain, d)
    if rng is None:
        rng = RandomStream(0)

    best: ClassDistance | None = None
    for restart in range(max(1, cfg.restarts)):
        srng = rng.fork(f"restart/{restart}")
        corners = _grid_points(box, 2)
        extra = srng.uniform(0.0, 1.0, (2 * d + 3, d))
        extra = box[:, 0] + extra * (box[:, 1] - box[:, 0])
        active = np.vstack([corners, box.mean(axis=1)[None, :], extra])

        converged = False
        rounds = 0
        w = np.zeros(d)
        b, t = 0.0, 0.0
        x_worst, v = active[0], np.inf
        for rounds in range(1, cfg.rounds + 1):
            fs = model.predict_batch(active)
            w, b, t = _chebyshev_fit(active, fs)
            x_worst, v = max_abs_residual(model, w, b, box, cfg,
                                          srng.fork(f"round/{rounds}"))
            if v <= t * (1.0 + cfg.rel_gap) + 1e-12:
                converged = True
                break
            active = np.vstack([active, x_worst[None, :]])

        cand = ClassDistance(v, w, b, x_worst, converged, rounds)
        if best is None or cand.d_hat < best.d_hat:
            best = cand
    return best


# ------------------------------------------- adversarial neighborhood story

@dataclass
class NeighborhoodGapReport:
    """One run of the construction: a surrogate that is excellent on a tight
    neighborhood and a second neighborhood on which its loss must reach the
    class distance."""
    x0: np.ndarray
    sigma: float
    n_samples: int
    weights: np.ndarray
    intercept: float
    benign_max_loss: float
    x_adv: np.ndarray
    adv_max_loss: float
    d_hat: float
    inequality_held: bool
    distance: ClassDistance

    def to_dict(self) -> dict:
        return {
            "x0": self.x0.tolist(),
            "sigma": self.sigma,
            "n_samples": self.n_samples,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "benign_max_loss": self.benign_max_loss,
            "x_adv": self.x_adv.tolist(),
            "adv_max_loss": self.adv_max_loss,
            "d_hat": self.d_hat,
            "inequality_held": self.inequality_held,
            "distance": self.distance.to_dict(),
        }


def nfl_construct(
    model: PredictiveModel,
    x0,
    domain,
    rng: RandomStream,
    sigma: float = 0.01,
    n_samples: int = 1000,
    adversarial_samples: int = 10000,
    cfg: SearchConfig = SearchConfig(),
    slack: float = 0.95,
) -> NeighborhoodGapReport:
    """Fit a linear surrogate on a tight Gaussian neighborhood of x0, then
    exhibit a second neighborhood where its absolute loss reaches the
    class-distance floor.

    The second neighborhood is uniform on the segment from x0 to the
    surrogate's worst point; that endpoint is appended explicitly so the
    sample max cannot miss it.
    """
    x0 = as_vector(x0, "x0")
    box = _as_box(domain, x0.size)

    inst = LfaInstance(
        NeighborhoodSpec(GaussianAdditive(sigma), ADD, UniformKernel(),
                         n_samples),
        SquaredError(), param=OF_PERTURBED_INPUT, intercept_rule=FREE,
    )
    pset = sample_perturbations(inst.neighborhood, model, x0,
                                rng.fork("benign"))
    exp = explain(model, x0, inst, pset=pset)
    w, b = exp.weights, exp.intercept
    benign = float(np.max(np.abs(pset.f_values - (pset.x @ w + b))))

    dist = estimate_class_distance(model, box, cfg, rng.fork("distance"))
    x_adv, _ = max_abs_residual(model, w, b, box, cfg, rng.fork("adversary"))

    ts = rng.fork("segment").uniform(0.0, 1.0, adversarial_samples)
    seg = x0 + ts[:, None] * (x_adv - x0)
    seg = np.vstack([seg, x_adv[None, :]])
    adv = float(np.max(np.abs(_residual(model, w, b, seg))))

    return NeighborhoodGapReport(
        x0=x0.copy(), sigma=sigma, n_samples=n_samples, weights=w,
        intercept=b, benign_max_loss=benign, x_adv=x_adv,
        adv_max_loss=adv, d_hat=dist.d_hat,
        inequality_held=bool(adv >= slack * dist.d_hat), distance=dist,
    )


# ----------------------------------------------------------- method matrix

@dataclass
class EquivalenceResult:
    """Mean distances between classic implementations (rows) and engine
    instances (columns), over a set of points."""
    methods: tuple[str, ...]
    l1: np.ndarray
    cosine: np.ndarray
    n_points: int

    def diagonal_is_row_minimum(self) -> bool:
        off = self.l1 + np.diag(np.full(len(self.methods), np.inf))
        return bool(np.all(np.diag(self.l1) <= off.min(axis=1)))

    def cluster_means(self, cluster_a, cluster_b):
        """Mean L1 within the two clusters (off-diagonal cells only) and
        across them."""
        idx = {m: i for i, m in enumerate(self.methods)}
        a = [idx[m] for m in cluster_a]
        b = [idx[m] for m in cluster_b]
        within, cross = [], []
        for i in a + b:
            for j in a + b:
                if i == j:
                    continue
                same = (i in a) == (j in a)
                (within if same else cross).append(self.l1[i, j])
        return float(np.mean(within)), float(np.mean(cross))

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "l1": self.l1.tolist(),
            "cosine": self.cosine.tolist(),
            "n_points": self.n_points,
        }

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "reference_method", "engine_method",
                             "value"])
            for name, mat in (("l1", self.l1), ("cosine", self.cosine)):
                for i, mi in enumerate(self.methods):
                    for j, mj in enumerate(self.methods):
                        writer.writerow([name, mi, mj, repr(float(mat[i, j]))])


def _reference_weights(method, model, x0, rng, sigma, n_samples, ig_steps):
    if method == "c_lime":
        return ref_clime(model, x0, sigma, n_samples, rng)
    if method == "smoothgrad":
        return ref_smoothgrad(model, x0, sigma, n_samples, rng)
    if method == "vanilla_gradients":
        return ref_vanilla_gradients(model, x0)
    if method == "integrated_gradients":
        return ref_integrated_gradients(model, x0, ig_steps)
    if method == "grad_x_input":
        return ref_grad_x_input(model, x0)
    if method == "lime":
        return ref_lime(model, x0, n_samples, rng)
    if method == "kernelshap":
        return ref_kernelshap(model, x0, n_samples, rng)
    if method == "occlusion":
        return ref_occlusion(model, x0)
    raise KeyError(f"unknown method {method!r}")


def _engine_weights(method, model, x0, rng, sigma, n_samples):
    inst = registry(method, sigma=sigma, n_samples=n_samples)
    if inst.shortcut:
        return explain(model, x0, inst).weights
    pset = sample_perturbations(inst.neighborhood, model, x0, rng,
                                need_gradients=needs_gradients(inst.loss))
    return explain(model, x0, inst, pset=pset).weights


def equivalence_matrix(
    model: PredictiveModel,
    points,
    rng: RandomStream,
    methods=METHODS,
    sigma: float = 0.1,
    n_samples: int = 1000,
    ig_steps: int = 1000,
) -> EquivalenceResult:
    """Every classic implementation against every engine instance.

    Both routes for the same method at the same point consume an identical
    noise stream, so the diagonal isolates solver differences from sampling
    differences.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError("points must be a nonempty (m, d) array")
    m = len(methods)
    refs = np.empty((points.shape[0], m), dtype=object)
    engs = np.empty_like(refs)
    for p, x0 in enumerate(points):
        for i, name in enumerate(methods):
            label = f"{name}/{p}"
            refs[p, i] = _reference_weights(name, model, x0,
                                            rng.fork(label), sigma,
                                            n_samples, ig_steps)
            engs[p, i] = _engine_weights(name, model, x0, rng.fork(label),
                                         sigma, n_samples)

    l1 = np.zeros((m, m))
    cos = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            l1[i, j] = np.mean([l1_distance(refs[p, i], engs[p, j])
                                for p in range(points.shape[0])])
            cos[i, j] = np.mean([cosine_distance(refs[p, i], engs[p, j])
                                 for p in range(points.shape[0])])
    return EquivalenceResult(tuple(methods), l1, cos, points.shape[0])


# -------------------------------------------------------- perturbation test

@dataclass
class PerturbCurve:
    method: str
    noise: str  # "binary-zero" | "gaussian"
    ks: tuple[int, ...]
    mean_abs_change: np.ndarray
    per_point: np.ndarray = field(repr=False)  # (n_points, len(ks))

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError("k values must be strictly increasing")
        if np.any(self.mean_abs_change < 0):
            raise ValueError("mean changes must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "noise": self.noise,
            "ks": list(self.ks),
            "mean_abs_change": self.mean_abs_change.tolist(),
        }


def curves_to_csv(curves, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "noise", "k", "mean_abs_change"])
        for c in curves:
            for k, v in zip(c.ks, c.mean_abs_change):
                writer.writerow([c.method, c.noise, k, repr(float(v))])


def bottom_k_indices(weights, k: int) -> np.ndarray:
    """Indices of the k smallest |w_i|; ties resolved toward the lower
    index (stable sort)."""
    w = as_vector(weights, "weights")
    if not 0 <= k <= w.size:
        raise ValueError(f"k must be in [0, {w.size}], got {k}")
    return np.argsort(np.abs(w), kind="stable")[:k]


def perturbation_test(
    model: PredictiveModel,
    points,
    attributions: dict,
    ks,
    noise: str = "binary-zero",
    sigma: float = 0.1,
    trials: int = 100,
    rng: RandomStream | None = None,
) -> list[PerturbCurve]:
    """Perturb each point's least-important features per attribution and
    record |f(perturbed) - f(point)|.

    binary-zero applies the single deterministic perturbation that zeroes
    the bottom-k features; gaussian adds `trials` draws of N(0, sigma^2)
    noise to them and averages.  Noise draws are shared across methods at
    each (point, k), so the curves differ only through the feature choice.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be an (m, d) array")
    n_pts, d = points.shape
    ks = tuple(int(k) for k in ks)
    if any(k >= d for k in ks):
        raise ValueError(f"every k must be below the dimension {d}")
    if noise not in ("binary-zero", "gaussian"):
        raise ValueError("noise must be 'binary-zero' or 'gaussian'")
    if noise == "gaussian" and rng is None:
        raise ValueError("gaussian perturbations need an rng")
    for name, w in attributions.items():
        w = np.asarray(w)
        if w.shape != points.shape:
            raise ValueError(f"attributions[{name!r}] must have shape "
                             f"{points.shape}, got {w.shape}")

    base = model.predict_batch(points)
    curves = []
    for name in attributions:
        per_point = np.zeros((n_pts, len(ks)))
        for p in range(n_pts):
            w = np.asarray(attributions[name], dtype=np.float64)[p]
            for ki, k in enumerate(ks):
                idx = bottom_k_indices(w, k)
                if noise == "binary-zero":
                    x = points[p].copy()
                    x[idx] = 0.0
                    per_point[p, ki] = abs(model.predict(x) - base[p])
                else:
                    block = rng.fork(f"noise/{p}/{k}").normal((trials, d))
                    xs = np.tile(points[p], (trials, 1))
                    xs[:, idx] += sigma * block[:, idx]
                    per_point[p, ki] = float(
                        np.mean(np.abs(model.predict_batch(xs) - base[p])))
        curves.append(PerturbCurve(name, noise, ks,
                                   per_point.mean(axis=0), per_point))
    return curves


def crossover_sign_test(curves, low_cluster, high_cluster) -> dict:
    """Per k, count the points where the low cluster's mean change sits
    strictly below the high cluster's."""
    by_name = {c.method: c for c in curves}
    ks = next(iter(by_name.values())).ks
    low = np.mean([by_name[m].per_point for m in low_cluster], axis=0)
    high = np.mean([by_name[m].per_point for m in high_cluster], axis=0)
    wins = {k: int(np.sum(low[:, ki] < high[:, ki]))
            for ki, k in enumerate(ks)}
    return {"wins": wins, "n_points": low.shape[0]}
