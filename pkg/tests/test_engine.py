"""Engine: closed forms vs independent oracles, iterative agreement,
registry wiring, limits, sparsity, loss validity."""
import math

import numpy as np
import pytest

from locex.core import RandomStream, l1_distance
from locex.models import LinearModel, MlpModel, SinusoidModel
from locex.engine import (
    FitConfig,
    FitDivergedError,
    GradientMatching,
    LfaInstance,
    NoClosedFormError,
    Regularized,
    SquaredError,
    empirical_loss,
    explain,
    fit_closed_form,
    fit_iterative,
    instance_descriptor,
    loss_is_valid_check,
    registry,
    sparse_smoothgrad,
    METHODS,
    OF_PERTURBED_INPUT,
)
from locex.neighborhoods import (
    ADD,
    GaussianAdditive,
    NeighborhoodSpec,
    UniformKernel,
    sample_perturbations,
)


def make_mlp(seed=0, d=4):
    rng = RandomStream(seed)
    sizes = [d, 8, 8, 8, 1]
    layers = []
    for i, (fi, fo) in enumerate(zip(sizes, sizes[1:])):
        act = "identity" if i == 3 else "tanh"
        layers.append((rng.normal((fo, fi)) / math.sqrt(fi),
                       0.1 * rng.normal(fo), act))
    return MlpModel(layers)


def rel_l1(a, b):
    return l1_distance(a, b) / max(float(np.sum(np.abs(b))), 1e-12)


# ------------------------------------------------------------- closed forms

def test_smoothgrad_closed_form_matches_naive_average():
    model = make_mlp(1)
    x0 = np.array([0.2, 0.8, -0.3, 0.5])
    inst = registry("smoothgrad", sigma=0.3, n_samples=200)
    pset = sample_perturbations(inst.neighborhood, model, x0,
                                RandomStream(3), need_gradients=True)
    expl = fit_closed_form(inst, pset)
    # oracle: plain python loop over single-point gradients
    acc = np.zeros(4)
    for row in pset.x:
        acc += model.gradient(row)
    assert np.allclose(expl.weights, acc / pset.n, atol=1e-10)
    assert expl.intercept == pytest.approx(model.predict(np.zeros(4)))
    assert expl.scale == "gradient"


def test_smoothgrad_exact_on_linear_model():
    model = LinearModel([1.5, -2.0, 0.25], 0.7)
    inst = registry("smoothgrad", sigma=0.5, n_samples=50)
    expl = explain(model, [1.0, 2.0, 3.0], inst, RandomStream(4))
    assert np.allclose(expl.weights, model.weights, atol=1e-12)
    assert expl.intercept == pytest.approx(0.7)


def test_integrated_gradients_quadratic_hand_value():
    # f(x) = x^2 in 1-d: attribution at x0=2 integrates 2 t x0 over t,
    # times x0, giving exactly 4
    class Quad(LinearModel):
        def __init__(self):
            super().__init__([0.0])
            self.input_dim = 1
        def predict(self, x):
            return float(np.sum(np.asarray(x) ** 2))
        def predict_batch(self, xs):
            return np.sum(np.asarray(xs) ** 2, axis=1)
        def gradient(self, x):
            return 2.0 * np.asarray(x, dtype=float)
        def gradient_batch(self, xs):
            return 2.0 * np.asarray(xs, dtype=float)

    model = Quad()
    inst = registry("integrated_gradients", n_samples=4000)
    expl = explain(model, [2.0], inst, RandomStream(5))
    assert expl.weights[0] == pytest.approx(4.0, abs=0.2)
    assert expl.scale == "gradient_times_input"


def test_integrated_gradients_matches_riemann_oracle_on_mlp():
    model = make_mlp(2)
    x0 = np.array([0.9, 0.4, -0.6, 0.2])
    inst = registry("integrated_gradients", n_samples=4000)
    expl = explain(model, x0, inst, RandomStream(6))
    steps = 4000
    ts = (np.arange(steps) + 0.5) / steps  # midpoint rule oracle
    riemann = x0 * np.mean(model.gradient_batch(ts[:, None] * x0), axis=0)
    assert rel_l1(expl.weights, riemann) < 0.02


def test_clime_exact_on_linear_model():
    model = LinearModel([2.0, -1.0], 0.5)
    x0 = np.array([1.0, 1.0])
    inst = registry("c_lime", sigma=0.2, n_samples=400)
    expl = explain(model, x0, inst, RandomStream(7))
    assert np.allclose(expl.weights, model.weights, atol=1e-9)
    # surrogate of the noise: its intercept is the value at zero noise
    assert expl.intercept == pytest.approx(model.predict(x0), abs=1e-9)


def test_lime_matches_weighted_lstsq_oracle():
    model = make_mlp(3)
    x0 = np.array([0.7, 0.3, 1.1, -0.4])
    inst = registry("lime", n_samples=600)
    pset = sample_perturbations(inst.neighborhood, model, x0, RandomStream(8))
    expl = fit_closed_form(inst, pset)
    # oracle: sqrt-weighted lstsq with ridge rows, independent of the
    # normal-equations path
    pi = pset.weights * (pset.n / np.sum(pset.weights))
    design = np.hstack([pset.xi, np.ones((pset.n, 1))]) * np.sqrt(pi)[:, None]
    pad = np.zeros((4, 5))
    pad[np.arange(4), np.arange(4)] = math.sqrt(1e-8)
    coef, *_ = np.linalg.lstsq(np.vstack([design, pad]),
                               np.concatenate([pset.f_values * np.sqrt(pi),
                                               np.zeros(4)]), rcond=None)
    assert np.max(np.abs(expl.weights - coef[:4])) < 1e-3
    assert expl.intercept == pytest.approx(coef[4], abs=1e-3)


def test_lime_and_kernelshap_recover_scaled_weights_on_linear():
    model = LinearModel([1.0, -2.0, 0.5], 0.3)
    x0 = np.array([0.8, 0.5, -1.2])
    # the clamped Shapley weights leave kernelshap's normal equations worse
    # conditioned than lime's, so its ridge bias is larger
    for method, tol in (("lime", 1e-6), ("kernelshap", 1e-3)):
        expl = explain(model, x0, registry(method, n_samples=500),
                       RandomStream(9))
        assert np.allclose(expl.weights, model.weights * x0, atol=tol), method
        assert expl.intercept == pytest.approx(0.3, abs=tol)
        assert expl.scale == "gradient_times_input"


def test_occlusion_closed_form_is_exact_value_drop():
    model = make_mlp(4)
    x0 = np.array([0.6, -0.2, 0.9, 0.4])
    expl = explain(model, x0, registry("occlusion", n_samples=8), RandomStream(10))
    f0 = model.predict(x0)
    for i in range(4):
        dropped = x0.copy()
        dropped[i] = 0.0
        assert expl.weights[i] == pytest.approx(f0 - model.predict(dropped), abs=1e-12)
    assert expl.intercept == 0.0


def test_occlusion_needs_full_coordinate_cycle():
    model = LinearModel(np.ones(5))
    inst = registry("occlusion", n_samples=3)
    with pytest.raises(ValueError, match="n_samples"):
        explain(model, np.ones(5), inst, RandomStream(0))


# ------------------------------------------------------------------- limits

def test_vanilla_gradients_shortcut_and_limit_agree():
    model = make_mlp(5)
    x0 = np.array([0.1, 0.5, -0.7, 0.3])
    inst = registry("vanilla_gradients")
    short = explain(model, x0, inst, RandomStream(11))
    assert short.diagnostics["analytic_shortcut"] is True
    assert np.array_equal(short.weights, model.gradient(x0))
    sampled = explain(model, x0, registry("vanilla_gradients", shortcut=False,
                                          n_samples=500), RandomStream(11))
    assert rel_l1(sampled.weights, short.weights) < 1e-4


def test_smoothgrad_sigma_ladder_approaches_vanilla():
    model = make_mlp(6)
    x0 = np.array([0.4, -0.1, 0.8, 0.2])
    vg = explain(model, x0, registry("vanilla_gradients"), RandomStream(12))
    gaps = []
    for sigma in (0.5, 0.1, 0.01, 0.001):
        sg = explain(model, x0, registry("smoothgrad", sigma=sigma, n_samples=800),
                     RandomStream(12))
        gaps.append(rel_l1(sg.weights, vg.weights))
    assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3


def test_grad_x_input_shortcut_and_scalar_limit():
    model = make_mlp(7)
    x0 = np.array([0.9, 0.6, -0.5, 1.2])
    gxi = explain(model, x0, registry("grad_x_input"), RandomStream(13))
    assert np.array_equal(gxi.weights, x0 * model.gradient(x0))
    gaps = []
    for low in (0.5, 0.99, 0.9999):
        ig = explain(model, x0, registry("integrated_gradients", low=low,
                                         n_samples=800), RandomStream(13))
        gaps.append(rel_l1(ig.weights, gxi.weights))
    assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3


# -------------------------------------------------------------- reparam form

def test_reparameterised_ig_drops_input_term_on_linear():
    model = LinearModel([3.0, -1.0], 0.2)
    x0 = np.array([0.5, 2.0])
    plain = explain(model, x0, registry("integrated_gradients", n_samples=400),
                    RandomStream(14))
    reparam = explain(model, x0, registry("integrated_gradients", n_samples=400,
                                          param=OF_PERTURBED_INPUT),
                      RandomStream(14))
    assert np.allclose(plain.weights, model.weights * x0, atol=1e-9)
    assert np.allclose(reparam.weights, model.weights, atol=1e-9)


def test_reparameterised_lime_recovers_model_itself_on_linear():
    model = LinearModel([1.0, -0.5, 2.0], -0.1)
    x0 = np.array([0.4, 1.5, 0.8])
    expl = explain(model, x0, registry("lime", n_samples=500,
                                       param=OF_PERTURBED_INPUT), RandomStream(15))
    assert np.max(np.abs(expl.weights - model.weights)) < 1e-3
    assert expl.intercept == pytest.approx(-0.1, abs=1e-3)


def test_reparameterised_gradient_matching_rejects_zero_coordinate():
    model = LinearModel([1.0, 1.0])
    inst = registry("integrated_gradients", param=OF_PERTURBED_INPUT, n_samples=50)
    with pytest.raises(ValueError, match="nonzero"):
        explain(model, [1.0, 0.0], inst, RandomStream(16))


# ---------------------------------------------------------------- iterative

def test_iterative_matches_closed_form_clime_linear():
    model = LinearModel([2.0, -3.0], 1.0)
    x0 = np.array([0.5, 0.5])
    inst = registry("c_lime", sigma=0.3, n_samples=500)
    pset = sample_perturbations(inst.neighborhood, model, x0, RandomStream(17))
    it = fit_iterative(inst, model, x0, RandomStream(18), pset=pset)
    cf = fit_closed_form(inst, pset)
    assert rel_l1(it.weights, cf.weights) < 1e-3
    assert it.intercept == pytest.approx(cf.intercept, abs=1e-3)
    assert it.diagnostics["test_loss"] <= 1.1 * it.diagnostics["closed_form_test_loss"] + 1e-12


def test_iterative_matches_closed_form_smoothgrad_mlp():
    model = make_mlp(8)
    x0 = np.array([0.3, 0.9, -0.2, 0.6])
    inst = registry("smoothgrad", sigma=0.2, n_samples=1000)
    pset = sample_perturbations(inst.neighborhood, model, x0, RandomStream(19),
                                need_gradients=True)
    it = fit_iterative(inst, model, x0, RandomStream(20), pset=pset)
    cf = fit_closed_form(inst, pset)
    assert rel_l1(it.weights, cf.weights) < 1e-2
    assert it.intercept == cf.intercept  # both pinned to f(0)


def test_iterative_matches_closed_form_ig_mlp():
    model = make_mlp(8)
    x0 = np.array([0.3, 0.9, -0.2, 0.6])
    inst = registry("integrated_gradients", n_samples=1000)
    pset = sample_perturbations(inst.neighborhood, model, x0, RandomStream(42),
                                need_gradients=True)
    it = fit_iterative(inst, model, x0, RandomStream(43), pset=pset)
    cf = fit_closed_form(inst, pset)
    assert rel_l1(it.weights, cf.weights) < 1e-2


def test_iterative_is_deterministic():
    model = make_mlp(9)
    x0 = np.array([0.1, 0.2, 0.3, 0.4])
    inst = registry("c_lime", sigma=0.2, n_samples=200)
    cfg = FitConfig(epochs=80)
    a = fit_iterative(inst, model, x0, RandomStream(21), cfg)
    b = fit_iterative(inst, model, x0, RandomStream(21), cfg)
    assert np.array_equal(a.weights, b.weights)
    assert a.intercept == b.intercept


def test_iterative_diverges_loudly_on_huge_learning_rate():
    model = LinearModel([1.0, 1.0])
    inst = registry("c_lime", sigma=1.0, n_samples=100)
    with pytest.raises(FitDivergedError):
        fit_iterative(inst, model, [1.0, 1.0], RandomStream(22),
                      FitConfig(epochs=50, learning_rate=1e9, patience=50))


def test_iterative_occlusion_converges_to_value_drops():
    model = LinearModel([1.0, 2.0, -1.0])
    x0 = np.array([1.0, 1.0, 2.0])
    inst = registry("occlusion", n_samples=300)
    it = fit_iterative(inst, model, x0, RandomStream(23),
                       FitConfig(epochs=300, patience=300))
    assert np.max(np.abs(it.weights - np.array([1.0, 2.0, -2.0]))) < 2e-2
    assert it.intercept == 0.0


# -------------------------------------------------------------- regularised

def test_regularised_has_no_closed_form():
    model = LinearModel([1.0, 1.0])
    base = registry("smoothgrad", n_samples=50)
    inst = LfaInstance(base.neighborhood, Regularized(GradientMatching(), 0.1),
                       intercept_rule="fixed_f0")
    pset = sample_perturbations(inst.neighborhood, model, [1.0, 1.0],
                                RandomStream(24), need_gradients=True)
    with pytest.raises(NoClosedFormError):
        fit_closed_form(inst, pset)


def test_l1_regularised_iterative_shrinks_weights():
    model = LinearModel([2.0, 0.05], 0.0)
    x0 = np.array([1.0, 1.0])
    nb = NeighborhoodSpec(GaussianAdditive(0.5), ADD, UniformKernel(), 400)
    plain = LfaInstance(nb, SquaredError())
    reg = LfaInstance(nb, Regularized(SquaredError(), lam=0.5, penalty="l1"))
    cfg = FitConfig(epochs=200, patience=200)
    w_plain = fit_iterative(plain, model, x0, RandomStream(25), cfg).weights
    w_reg = fit_iterative(reg, model, x0, RandomStream(25), cfg).weights
    assert np.sum(np.abs(w_reg)) < np.sum(np.abs(w_plain))
    assert abs(w_reg[1]) < 1e-3  # small coefficient is pruned


def test_sparse_smoothgrad_threshold_hand_case():
    model = LinearModel([3.0, 0.01])
    expl = sparse_smoothgrad(model, [1.0, 1.0], sigma=0.1, lam=0.02,
                             rng=RandomStream(26), n_samples=200)
    assert np.allclose(expl.weights, [3.0, 0.0], atol=1e-12)
    assert expl.diagnostics["nonzeros"] == 1
    dense = sparse_smoothgrad(model, [1.0, 1.0], sigma=0.1, lam=0.0,
                              rng=RandomStream(26), n_samples=200)
    assert np.allclose(dense.weights, [3.0, 0.01], atol=1e-12)


def test_sparse_smoothgrad_support_shrinks_with_lam():
    model = make_mlp(10)
    x0 = np.array([0.5, 0.25, -0.4, 0.9])
    counts = []
    for lam in (0.0, 1e-4, 1e-2, 1.0):
        expl = sparse_smoothgrad(model, x0, sigma=0.1, lam=lam,
                                 rng=RandomStream(27), n_samples=300)
        counts.append(expl.diagnostics["nonzeros"])
    assert counts[0] == 4
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == 0


# ------------------------------------------------------------ loss validity

def test_squared_error_valid_loss_witness():
    f = LinearModel([1.0, 2.0], 0.5)
    g_same = LinearModel([1.0, 2.0], 0.5)
    g_shift = LinearModel([1.0, 2.0], 5.5)
    spec = NeighborhoodSpec(GaussianAdditive(1.0), ADD, UniformKernel(), 1000)
    rep = loss_is_valid_check(SquaredError(), f, g_same, spec, [0.0, 0.0],
                              RandomStream(28))
    assert rep.zero_loss and rep.agrees_up_to_offset and rep.consistent
    assert rep.offset == 0.0
    rep2 = loss_is_valid_check(SquaredError(), f, g_shift, spec, [0.0, 0.0],
                               RandomStream(28))
    assert rep2.mean_loss == pytest.approx(25.0, abs=1e-9)
    assert not rep2.zero_loss and not rep2.agrees_up_to_offset
    assert rep2.consistent  # nonzero loss plus disagreement is coherent


def test_gradient_matching_valid_up_to_constant():
    f = LinearModel([1.0, -1.0], 0.0)
    g = LinearModel([1.0, -1.0], 5.0)  # same slope, shifted value
    spec = NeighborhoodSpec(GaussianAdditive(0.5), ADD, UniformKernel(), 500)
    rep = loss_is_valid_check(GradientMatching(), f, g, spec, [1.0, 1.0],
                              RandomStream(29))
    assert rep.zero_loss
    assert rep.offset == pytest.approx(-5.0)
    assert rep.agrees_up_to_offset and rep.consistent


def test_gradient_matching_flags_different_slopes():
    f = LinearModel([1.0, 0.0])
    g = LinearModel([0.0, 1.0])
    spec = NeighborhoodSpec(GaussianAdditive(0.5), ADD, UniformKernel(), 200)
    rep = loss_is_valid_check(GradientMatching(), f, g, spec, [1.0, 1.0],
                              RandomStream(30))
    assert rep.mean_loss == pytest.approx(2.0, abs=1e-9)
    assert not rep.zero_loss


# ----------------------------------------------------------- instance wiring

def test_registry_builds_all_methods():
    for method in METHODS:
        inst = registry(method)
        assert inst.method == method
        desc = instance_descriptor(inst)
        assert desc["method"] == method
        assert desc["combine"] in ("add", "elementwise_multiply", "scalar_multiply")


def test_registry_rejects_unknown_method():
    with pytest.raises(KeyError):
        registry("deep_taylor")


def test_instance_validation_rules():
    nb = NeighborhoodSpec(GaussianAdditive(0.1), ADD, UniformKernel(), 10)
    with pytest.raises(ValueError, match="intercept"):
        LfaInstance(nb, GradientMatching(), intercept_rule="free")
    with pytest.raises(ValueError, match="shortcut"):
        LfaInstance(nb, SquaredError(), shortcut=True)
    with pytest.raises(ValueError):
        LfaInstance(nb, SquaredError(), param="of_something")
    with pytest.raises(ValueError):
        Regularized(SquaredError(), lam=-1.0)
    occ = registry("occlusion")
    with pytest.raises(ValueError, match="zero"):
        LfaInstance(occ.neighborhood, SquaredError(), intercept_rule="free")


def test_empirical_loss_zero_at_exact_surrogate():
    model = LinearModel([1.0, -2.0], 0.3)
    x0 = np.array([0.5, 0.5])
    inst = registry("c_lime", sigma=0.4, n_samples=100)
    pset = sample_perturbations(inst.neighborhood, model, x0, RandomStream(31))
    loss = empirical_loss(inst, pset, model.weights, model.predict(x0))
    assert loss < 1e-24


def test_explanation_round_trip(tmp_path):
    model = LinearModel([1.0, 2.0], 0.0)
    expl = explain(model, [1.0, 1.0], registry("smoothgrad", n_samples=50),
                   RandomStream(32))
    path = tmp_path / "expl.json"
    expl.save(path)
    import json
    payload = json.loads(path.read_text())
    assert payload["method"] == "smoothgrad"
    assert payload["scale"] == "gradient"
    assert payload["instance"]["noise"]["family"] == "GaussianAdditive"
    assert np.allclose(payload["weights"], [1.0, 2.0])


def test_sinusoid_masks_yield_zero_weights():
    # mask-based methods cannot see a function that vanishes on every mask
    x0 = np.array([0.5, 1.5, 2.5])
    model = SinusoidModel.mask_invisible(x0)
    for method in ("lime", "kernelshap", "occlusion"):
        expl = explain(model, x0, registry(method, n_samples=200), RandomStream(33))
        assert float(np.max(np.abs(expl.weights))) < 1e-8, method
