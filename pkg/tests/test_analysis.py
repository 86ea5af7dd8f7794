import numpy as np
import pytest

from locex.analysis import (
    GRADIENT_SCALE_METHODS,
    INPUT_SCALE_METHODS,
    MASK_METHODS,
    ClassDistance,
    SearchConfig,
    bottom_k_indices,
    check_recovery,
    crossover_sign_test,
    curves_to_csv,
    equivalence_matrix,
    estimate_class_distance,
    max_abs_residual,
    nfl_construct,
    perturbation_test,
    reparam_recovery_check,
)
from locex.core import DegenerateVectorError, RandomStream
from locex.engine import METHODS
from locex.models import (
    LinearModel,
    LogisticModel,
    MlpModel,
    QuadraticModel,
    SinusoidModel,
)


def make_mlp(seed=0, d=4):
    rng = RandomStream(seed)
    layers = []
    sizes = [d, 8, 8, 8, 1]
    for i in range(len(sizes) - 1):
        w = rng.normal((sizes[i + 1], sizes[i])) / np.sqrt(sizes[i])
        b = np.zeros(sizes[i + 1])
        act = "tanh" if i < len(sizes) - 2 else "identity"
        layers.append((w, b, act))
    return MlpModel(layers)


def chebyshev_line_oracle(model, lo, hi, w_lo, w_hi, nw=2001, nx=4001):
    """Independent dense-grid value of min_w,b max_x |f(x) - w*x - b| in one
    dimension: for each slope on a grid the optimal intercept centers the
    residual, so the max loss is half the residual range."""
    xs = np.linspace(lo, hi, nx)
    fs = model.predict_batch(xs[:, None])
    ws = np.linspace(w_lo, w_hi, nw)
    r = fs[None, :] - ws[:, None] * xs[None, :]
    half_range = (r.max(axis=1) - r.min(axis=1)) / 2.0
    return float(half_range.min())


# ------------------------------------------------------------ recovery

def test_smoothgrad_recovers_linear_weights():
    model = LinearModel(np.array([2.0, -1.0, 0.5]), 0.0)
    rep = check_recovery(model, [1.0, 1.0, 1.0], "smoothgrad",
                         RandomStream(0))
    assert rep.target_kind == "weights"
    assert rep.l1 < 1e-6
    assert rep.recovered


def test_grad_x_input_targets_scaled_weights():
    model = LinearModel(np.array([2.0, -1.0, 0.5]), 0.0)
    x0 = np.array([3.0, 2.0, 1.0])
    rep = check_recovery(model, x0, "grad_x_input", RandomStream(1))
    assert rep.target_kind == "weights_times_x0"
    assert np.allclose(rep.target, [6.0, -2.0, 0.5])
    assert rep.recovered
    # and it visibly does not match the raw weights
    assert np.sum(np.abs(rep.weights - model.weights)) > 1.0


def test_recovery_dichotomy_all_methods_on_linear():
    model = LinearModel(np.array([1.0, -2.0, 3.0, 0.5]), 2.0)
    x0 = np.array([2.0, 1.0, -1.0, 4.0])
    for method in METHODS:
        rep = check_recovery(model, x0, method, RandomStream(7))
        assert rep.recovered, (method, rep.rel_l1)
        want = "weights" if method in GRADIENT_SCALE_METHODS \
            else "weights_times_x0"
        assert rep.target_kind == want


def test_sinusoid_masks_recover_zero():
    model = SinusoidModel([np.pi])
    rep = check_recovery(model, [1.0], "lime", RandomStream(2))
    assert rep.target_kind == "zero"
    assert np.max(np.abs(rep.weights)) < 1e-8
    assert rep.recovered


def test_sinusoid_rejects_non_mask_methods():
    model = SinusoidModel([np.pi])
    with pytest.raises(ValueError, match="mask"):
        check_recovery(model, [1.0], "smoothgrad", RandomStream(0))


def test_recovery_rejects_unknown_family_and_method():
    with pytest.raises(ValueError, match="linear, logistic"):
        check_recovery(make_mlp(), np.zeros(4), "lime", RandomStream(0))
    with pytest.raises(KeyError):
        check_recovery(LinearModel([1.0], 0.0), [1.0], "nope",
                       RandomStream(0))


def test_logistic_recovery_is_directional():
    model = LogisticModel(np.array([2.0, -1.0, 0.5]), 0.3)
    rep = check_recovery(model, [0.2, -0.1, 0.4], "smoothgrad",
                         RandomStream(3))
    assert rep.family == "logistic"
    assert rep.cosine < 1e-3
    assert rep.recovered


def test_reparam_recovers_raw_weights():
    model = LinearModel(np.array([2.0, -1.0]), 0.0)
    rep = reparam_recovery_check(model, [3.0, 2.0], "grad_x_input",
                                 RandomStream(4))
    assert np.max(np.abs(rep.weights - [2.0, -1.0])) < 1e-10
    assert rep.recovered


def test_reparam_recovers_for_all_four_methods():
    model = LinearModel(np.array([1.0, 1.0, 1.0]), 0.5)
    x0 = np.array([1.0, 2.0, 3.0])
    for method in ("integrated_gradients", "grad_x_input", "lime",
                   "kernelshap"):
        rep = reparam_recovery_check(model, x0, method, RandomStream(5))
        assert rep.rel_l1 < 1e-3, (method, rep.rel_l1)
        assert rep.recovered


def test_reparam_rejects_zero_coordinate_and_bad_method():
    model = LinearModel(np.array([1.0, 1.0]), 0.0)
    with pytest.raises(DegenerateVectorError):
        reparam_recovery_check(model, [1.0, 0.0], "lime", RandomStream(0))
    with pytest.raises(ValueError, match="occlusion|multiplicative"):
        reparam_recovery_check(model, [1.0, 1.0], "occlusion",
                               RandomStream(0))


# ---------------------------------------------------------- class distance

def test_distance_zero_when_model_is_in_the_class():
    model = LinearModel(np.array([2.0, -1.0]), 0.5)
    res = estimate_class_distance(model, [[-1, 1], [-1, 1]],
                                  rng=RandomStream(0))
    assert res.d_hat < 1e-6
    assert res.converged


def test_distance_square_on_unit_interval_is_one_eighth():
    # classical equioscillation value for x^2 against lines on [0, 1]
    res = estimate_class_distance(QuadraticModel([1.0]), [[0.0, 1.0]],
                                  rng=RandomStream(1))
    assert abs(res.d_hat - 0.125) <= 0.05 * 0.125


def test_distance_square_on_symmetric_interval_matches_grid_oracle():
    res = estimate_class_distance(QuadraticModel([1.0]), [[-1.0, 1.0]],
                                  rng=RandomStream(2))
    oracle = chebyshev_line_oracle(QuadraticModel([1.0]), -1.0, 1.0,
                                   -2.0, 2.0)
    assert abs(res.d_hat - oracle) <= 0.05 * oracle
    assert abs(oracle - 0.5) < 1e-3


def test_distance_sine_matches_grid_oracle():
    model = SinusoidModel([1.0])
    res = estimate_class_distance(model, [[-np.pi, np.pi]],
                                  rng=RandomStream(3))
    oracle = chebyshev_line_oracle(model, -np.pi, np.pi, -0.5, 1.5)
    assert abs(res.d_hat - oracle) <= 0.05 * oracle


def test_distance_rejects_bad_domain():
    with pytest.raises(ValueError, match="domain"):
        estimate_class_distance(LinearModel([1.0], 0.0), [[1.0, -1.0]])


def test_max_abs_residual_grid_hand_case():
    # residual of x^2 against the zero surrogate peaks at the right edge
    x, v = max_abs_residual(QuadraticModel([1.0]), [0.0], 0.0, [[-1.0, 2.0]])
    assert v == pytest.approx(4.0, abs=1e-6)
    assert x[0] == pytest.approx(2.0, abs=1e-6)


def test_max_abs_residual_random_search_three_dim():
    model = QuadraticModel([1.0, 1.0, 1.0])
    box = [[-1.0, 1.0]] * 3
    x, v = max_abs_residual(model, np.zeros(3), 0.0, box,
                            rng=RandomStream(4))
    assert v > 2.7  # true max is 3.0 at a corner; ascent should get close


# ------------------------------------------------- adversarial neighborhood

def test_gap_construction_on_sine():
    model = SinusoidModel([1.0])
    rep = nfl_construct(model, [0.0], [[-np.pi, np.pi]], RandomStream(6))
    assert rep.benign_max_loss < 0.01
    assert rep.adv_max_loss >= 0.95 * rep.d_hat
    assert rep.inequality_held


def test_gap_construction_trivial_for_linear():
    model = LinearModel(np.array([1.5]), 0.2)
    rep = nfl_construct(model, [0.3], [[-2.0, 2.0]], RandomStream(7))
    assert rep.d_hat < 1e-6
    assert rep.adv_max_loss < 1e-6
    assert rep.inequality_held


def test_gap_report_is_deterministic():
    model = SinusoidModel([1.0])
    a = nfl_construct(model, [0.0], [[-np.pi, np.pi]], RandomStream(8))
    b = nfl_construct(model, [0.0], [[-np.pi, np.pi]], RandomStream(8))
    assert a.to_dict() == b.to_dict()


# ------------------------------------------------------------ method matrix

def test_matrix_hand_case_two_methods():
    model = LinearModel(np.array([2.0, -1.0]), 0.0)
    res = equivalence_matrix(model, [[3.0, 2.0]], RandomStream(9),
                             methods=("vanilla_gradients", "grad_x_input"))
    assert res.l1[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert res.l1[1, 1] == pytest.approx(0.0, abs=1e-12)
    # |2-6| + |-1-(-2)| = 5 both ways
    assert res.l1[0, 1] == pytest.approx(5.0, abs=1e-12)
    assert res.l1[1, 0] == pytest.approx(5.0, abs=1e-12)


def test_matrix_diagonal_dominance_on_mlp(tmp_path):
    model = make_mlp(11)
    rng = RandomStream(12)
    points = 0.5 + 0.4 * rng.fork("pts").normal((5, 4))
    res = equivalence_matrix(model, points, rng, sigma=0.1, n_samples=600)
    assert res.diagonal_is_row_minimum()
    within, cross = res.cluster_means(GRADIENT_SCALE_METHODS,
                                      INPUT_SCALE_METHODS)
    assert within < cross

    out = tmp_path / "matrix.csv"
    res.to_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "metric,reference_method,engine_method,value"
    assert len(lines) == 1 + 2 * len(METHODS) ** 2


def test_matrix_roughly_symmetric_on_mlp():
    model = make_mlp(13)
    rng = RandomStream(14)
    points = 0.5 + 0.4 * rng.fork("pts").normal((4, 4))
    res = equivalence_matrix(model, points, rng, n_samples=600)
    off = ~np.eye(len(res.methods), dtype=bool)
    asym = np.abs(res.l1 - res.l1.T)[off].mean()
    scale = res.l1[off].mean()
    assert asym < 0.25 * scale


def test_matrix_rejects_empty_points():
    with pytest.raises(ValueError, match="points"):
        equivalence_matrix(LinearModel([1.0], 0.0), np.zeros((0, 1)),
                           RandomStream(0))


# -------------------------------------------------------- perturbation test

def test_bottom_k_stable_tie_break():
    assert bottom_k_indices([1.0, -1.0, 2.0], 2).tolist() == [0, 1]
    assert bottom_k_indices([3.0, 0.5, 0.5], 1).tolist() == [1]
    with pytest.raises(ValueError, match="k"):
        bottom_k_indices([1.0], 5)


def test_binary_zero_hand_value():
    model = LinearModel(np.array([5.0, 0.1, 3.0]), 1.0)
    pts = np.array([[1.0, 1.0, 1.0]])
    attr = {"exact": np.array([[5.0, 0.1, 3.0]])}
    curves = perturbation_test(model, pts, attr, ks=(1, 2))
    assert curves[0].mean_abs_change[0] == pytest.approx(0.1, abs=1e-12)
    assert curves[0].mean_abs_change[1] == pytest.approx(3.1, abs=1e-12)


def test_k_zero_changes_nothing():
    model = LinearModel(np.array([1.0, 2.0]), 0.0)
    pts = np.array([[1.0, 1.0]])
    attr = {"a": np.array([[1.0, 2.0]])}
    curves = perturbation_test(model, pts, attr, ks=(0, 1))
    assert curves[0].mean_abs_change[0] == 0.0


def test_gaussian_change_matches_folded_normal_mean():
    # adding N(0, s^2) to one feature of a linear model gives
    # E|change| = s * |w_i| * sqrt(2/pi)
    model = LinearModel(np.array([2.0, 0.1]), 0.0)
    pts = np.array([[1.0, 1.0]])
    attr = {"a": np.array([[2.0, 0.1]])}
    curves = perturbation_test(model, pts, attr, ks=(1,), noise="gaussian",
                               sigma=0.5, trials=4000, rng=RandomStream(15))
    want = 0.5 * 0.1 * np.sqrt(2.0 / np.pi)
    assert curves[0].mean_abs_change[0] == pytest.approx(want, rel=0.05)


def test_noise_is_shared_across_methods():
    model = make_mlp(16)
    pts = RandomStream(17).normal((3, 4))
    w = RandomStream(18).normal((3, 4))
    attr = {"a": w, "b": w.copy()}
    curves = perturbation_test(model, pts, attr, ks=(1, 2),
                               noise="gaussian", trials=50,
                               rng=RandomStream(19))
    assert np.array_equal(curves[0].per_point, curves[1].per_point)


def test_random_attribution_never_beats_exact_on_average():
    # averaged over seeds, deleting truly-unimportant features moves a
    # linear model less than deleting a random subset
    diffs = np.zeros((100, 2))
    for s in range(100):
        rng = RandomStream(100 + s)
        w = rng.fork("w").normal(6)
        x0 = rng.fork("x").normal(6) + 2.0
        model = LinearModel(w, 0.0)
        exact = (w * x0)[None, :]
        rand = rng.fork("perm").normal(6)[None, :]
        curves = perturbation_test(model, x0[None, :],
                                   {"exact": exact, "random": rand},
                                   ks=(1, 2))
        by = {c.method: c.mean_abs_change for c in curves}
        diffs[s] = by["random"] - by["exact"]
    assert np.all(diffs.mean(axis=0) >= 0.0)


def test_crossover_sign_test_counts():
    model = LinearModel(np.array([1.0, 2.0, 3.0]), 0.0)
    pts = np.tile([1.0, 1.0, 1.0], (4, 1))
    low = np.tile([0.1, 2.0, 3.0], (4, 1))   # puts feature 0 last
    high = np.tile([3.0, 2.0, 0.1], (4, 1))  # puts feature 2 last
    curves = perturbation_test(model, pts, {"lo": low, "hi": high}, ks=(1,))
    out = crossover_sign_test(curves, ["lo"], ["hi"])
    # zeroing feature 0 changes f by 1, zeroing feature 2 by 3
    assert out["wins"] == {1: 4}
    assert out["n_points"] == 4


def test_perturbation_validation_errors():
    model = LinearModel(np.array([1.0, 2.0]), 0.0)
    pts = np.array([[1.0, 1.0]])
    attr = {"a": np.array([[1.0, 2.0]])}
    with pytest.raises(ValueError, match="below the dimension"):
        perturbation_test(model, pts, attr, ks=(2,))
    with pytest.raises(ValueError, match="noise"):
        perturbation_test(model, pts, attr, ks=(1,), noise="flip")
    with pytest.raises(ValueError, match="rng"):
        perturbation_test(model, pts, attr, ks=(1,), noise="gaussian")
    with pytest.raises(ValueError, match="shape"):
        perturbation_test(model, pts, {"a": np.zeros((2, 2))}, ks=(1,))


def test_curves_csv_round_trip(tmp_path):
    model = LinearModel(np.array([1.0, 2.0]), 0.0)
    pts = np.array([[1.0, 1.0]])
    curves = perturbation_test(model, pts, {"a": np.array([[1.0, 2.0]])},
                               ks=(0, 1))
    out = tmp_path / "curves.csv"
    curves_to_csv(curves, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "method,noise,k,mean_abs_change"
    assert lines[1] == "a,binary-zero,0,0.0"
    assert lines[2] == "a,binary-zero,1,1.0"
