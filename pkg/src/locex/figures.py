"""File-based matplotlib rendering for the report pipeline.

Every function takes already-computed results plus an output path and writes
one PNG; nothing here opens a window or recomputes numbers, so the delimited
outputs stay the source of truth.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_equivalence_heatmap(result, path) -> str:
    """L1 distance matrix, reference methods on rows, engine instances on
    columns."""
    fig, ax = plt.subplots(figsize=(7.5, 6.5))
    im = ax.imshow(result.l1, cmap="viridis")
    ticks = range(len(result.methods))
    ax.set_xticks(ticks, result.methods, rotation=45, ha="right")
    ax.set_yticks(ticks, result.methods)
    ax.set_xlabel("engine instance")
    ax.set_ylabel("classic implementation")
    vmax = float(result.l1.max()) or 1.0
    for i in ticks:
        for j in ticks:
            v = result.l1[i, j]
            ax.text(j, i, f"{v:.2g}", ha="center", va="center", fontsize=7,
                    color="white" if v < 0.6 * vmax else "black")
    fig.colorbar(im, ax=ax, label="mean L1 distance")
    ax.set_title(f"method agreement over {result.n_points} points")
    return _save(fig, path)


def plot_recovery(reports, path) -> str:
    """Relative error per method against its recovery threshold."""
    fig, ax = plt.subplots(figsize=(8, 4))
    names = [r.method for r in reports]
    vals = [r.rel_l1 if r.rel_l1 is not None
            else float(np.max(np.abs(r.weights))) for r in reports]
    floor = 1e-17
    colors = ["tab:green" if r.recovered else "tab:red" for r in reports]
    ax.bar(names, np.maximum(vals, floor), color=colors)
    for r in reports:
        ax.axhline(r.tau, color="gray", lw=0.5, ls="--")
    ax.set_yscale("log")
    ax.set_ylabel("distance to target (rel. L1, log)")
    ax.tick_params(axis="x", rotation=45)
    ax.set_title("recovery of the generating model")
    return _save(fig, path)


def plot_perturbation_curves(curves, path) -> str:
    """Mean |prediction change| against k, one line per method."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for c in curves:
        ax.plot(c.ks, c.mean_abs_change, marker="o", label=c.method)
    ax.set_xlabel("k features perturbed")
    ax.set_ylabel("mean |f change|")
    noise = curves[0].noise if curves else ""
    ax.set_title(f"perturbation test ({noise})")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_gap_construction(report, model, domain, path, grid: int = 600) -> str:
    """In one dimension, the function, its tight-neighborhood surrogate, and
    the adversarial point; otherwise a bar summary of the three losses."""
    box = np.asarray(domain, dtype=np.float64)
    if report.x0.size == 1:
        xs = np.linspace(box[0, 0], box[0, 1], grid)
        fig, ax = plt.subplots(figsize=(7, 4.5))
        ax.plot(xs, model.predict_batch(xs[:, None]), label="f")
        ax.plot(xs, report.weights[0] * xs + report.intercept,
                label="surrogate")
        ax.axvline(report.x0[0], color="gray", ls=":", label="x0")
        ax.axvline(report.x_adv[0], color="tab:red", ls="--", label="x_adv")
        ax.set_title(f"benign max loss {report.benign_max_loss:.2g}, "
                     f"adversarial {report.adv_max_loss:.2g}, "
                     f"class distance {report.d_hat:.2g}")
        ax.legend(fontsize=8)
        return _save(fig, path)

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(["benign", "class distance", "adversarial"],
           [report.benign_max_loss, report.d_hat, report.adv_max_loss])
    ax.set_yscale("log")
    ax.set_ylabel("max |f - g|")
    return _save(fig, path)


def plot_weights(weights_by_method: dict, feature_names, path) -> str:
    """Grouped bars of attribution weights per feature."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    names = list(weights_by_method)
    d = len(feature_names)
    xs = np.arange(d)
    width = 0.8 / max(1, len(names))
    for i, name in enumerate(names):
        ax.bar(xs + i * width, np.asarray(weights_by_method[name]),
               width, label=name)
    ax.set_xticks(xs + 0.4 - width / 2, feature_names, rotation=45,
                  ha="right")
    ax.axhline(0.0, color="black", lw=0.6)
    ax.set_ylabel("weight")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_training_curve(epoch_losses, path) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.asarray(epoch_losses))
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    return _save(fig, path)
