"""Dataset plumbing: CSV in/out, nearest-neighbor imputation, mean-center
plus min-max normalization, seeded splitting, and synthetic generators with
known ground truth.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RandomStream


@dataclass
class RawTable:
    """Parsed CSV contents; missing feature cells hold nan."""
    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.features)


@dataclass
class NormRecord:
    """Per-feature statistics fixing the affine map to [0, 1]: subtract the
    mean, then scale the centered range.  Constant columns map to 0.5 and
    invert back to their original value."""
    mean: np.ndarray
    low: np.ndarray
    high: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        centered = features - self.mean
        span = self.high - self.low
        with np.errstate(invalid="ignore", divide="ignore"):
            scaled = (centered - self.low) / span
        return np.where(span > 0, scaled, 0.5)

    def invert(self, features: np.ndarray) -> np.ndarray:
        span = self.high - self.low
        return np.where(span > 0, features * span + self.low, 0.0) + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "low": self.low.tolist(),
                "high": self.high.tolist()}


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str]
    norm: NormRecord | None = None
    provenance: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if self.targets.shape != (self.features.shape[0],):
            raise ValueError("targets must have one entry per row")
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("one name per feature column required")
        if np.isnan(self.features).any() or np.isnan(self.targets).any():
            raise ValueError("datasets may not contain missing values; "
                             "impute first")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


# ------------------------------------------------------------------ csv i/o

def load_csv(path, target: str, missing: str = "") -> RawTable:
    """Read a header-first CSV of numbers into features and a target column.

    Feature cells equal to the missing marker become nan; a missing target
    cell is an error since nothing downstream can impute it.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if target not in header:
        raise ValueError(f"{path}: target column {target!r} not in header "
                         f"{header}")
    if len(rows) == 1:
        raise ValueError(f"{path}: no data rows")
    t_col = header.index(target)

    feats, targs = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i} has {len(row)} cells, "
                             f"expected {len(header)}")
        vals = []
        for name, cell in zip(header, row):
            cell = cell.strip()
            if cell == missing:
                vals.append(math.nan)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise ValueError(f"{path}: row {i}, column {name!r}: "
                                 f"cannot parse {cell!r}") from None
        if math.isnan(vals[t_col]):
            raise ValueError(f"{path}: row {i}: target value is missing")
        targs.append(vals.pop(t_col))
        feats.append(vals)

    names = [h for j, h in enumerate(header) if j != t_col]
    return RawTable(np.array(feats, dtype=np.float64),
                    np.array(targs, dtype=np.float64), names)


def save_csv(table, path, target: str = "target") -> None:
    """Write features plus a target column; floats as repr strings so a
    load round-trips bit for bit, missing cells as empty strings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(table.feature_names) + [target])
        for x, y in zip(table.features, table.targets):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in x]
            writer.writerow(cells + [repr(float(y))])


# --------------------------------------------------------------- imputation

def knn_impute(table: RawTable, k: int = 5) -> RawTable:
    """Fill each missing cell with the mean of its column over the k nearest
    rows, measured on mutually observed features.

    Distances use sqrt(mean squared difference over shared features), so
    rows sharing few features are not unfairly close.  Candidate neighbors
    are the rows where the column in question is observed; all imputations
    read the original table, never each other's results.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    x = table.features
    observed = ~np.isnan(x)
    if not observed.any(axis=1).all():
        raise ValueError("every row needs at least one observed feature")
    counts = observed.sum(axis=0)
    if (counts < k).any():
        bad = [table.feature_names[j] for j in np.flatnonzero(counts < k)]
        raise ValueError(f"columns {bad} have fewer than k={k} observed "
                         "rows")

    out = x.copy()
    for i, j in zip(*np.nonzero(~observed)):
        cands = np.flatnonzero(observed[:, j])
        shared = observed[i] & observed[cands]
        n_shared = shared.sum(axis=1)
        diff = np.where(shared, x[i] - np.nan_to_num(x[cands]), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            dist = np.sqrt(np.sum(diff**2, axis=1) / n_shared)
        dist = np.where(n_shared > 0, dist, np.inf)
        order = np.argsort(dist, kind="stable")
        nearest = cands[order[:k]]
        if not np.isfinite(dist[order[:k]]).all():
            raise ValueError(
                f"row {i} shares no observed features with enough "
                f"neighbors for column {table.feature_names[j]!r}")
        out[i, j] = float(np.mean(x[nearest, j]))
    return RawTable(out, table.targets.copy(), list(table.feature_names))


# ------------------------------------------------------------ normalization

def normalize(table, record: NormRecord | None = None) -> Dataset:
    """Mean-center each feature, then map its range onto [0, 1].

    Pass a record to reuse previously computed statistics (for example,
    train-set statistics applied to a test set); otherwise statistics come
    from the data itself.
    """
    feats = np.asarray(table.features, dtype=np.float64)
    if np.isnan(feats).any():
        raise ValueError("normalize needs a complete table; impute first")
    if record is None:
        mean = feats.mean(axis=0)
        centered = feats - mean
        record = NormRecord(mean, centered.min(axis=0), centered.max(axis=0))
    prov = getattr(table, "provenance", None)
    return Dataset(record.apply(feats), np.asarray(table.targets).copy(),
                   list(table.feature_names), record, prov)


# ------------------------------------------------------------------- splits

def split(dataset: Dataset, fraction: float = 0.8, seed: int = 0):
    """Seed-deterministic shuffle into train and test parts."""
    if dataset.n < 2:
        raise ValueError("need at least two rows to split")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be strictly between 0 and 1")
    perm = RandomStream(seed).fork("split").permutation(dataset.n)
    n_train = int(dataset.n * fraction)
    tr, te = perm[:n_train], perm[n_train:]

    def take(idx):
        return Dataset(dataset.features[idx], dataset.targets[idx],
                       list(dataset.feature_names), dataset.norm,
                       dataset.provenance)

    return take(tr), take(te)


# -------------------------------------------------------------- synthesizers

SYNTH_KINDS = ("linear-regression", "logistic-blobs", "friedman")


def synth_generate(kind: str, n: int, d: int, noise: float = 0.1,
                   seed: int = 0, separation: float = 4.0) -> Dataset:
    """Reproducible toy datasets with the generating function recorded.

    linear-regression: uniform features, linear targets plus Gaussian noise.
    logistic-blobs: two Gaussian clusters, binary labels.
    friedman: the classic nonlinear regression surface
        10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5
    on uniform features (needs d >= 5; extra features are inert).
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if kind not in SYNTH_KINDS:
        raise ValueError(f"kind must be one of {SYNTH_KINDS}")
    rng = RandomStream(seed)
    names = [f"x{j}" for j in range(d)]

    if kind == "linear-regression":
        x = rng.fork("features").uniform(0.0, 1.0, (n, d))
        w = rng.fork("weights").normal(d)
        b = 0.5
        y = x @ w + b + noise * rng.fork("noise").normal(n)
        prov = {"kind": kind, "weights": w.tolist(), "intercept": b,
                "noise": noise, "seed": seed}
        return Dataset(x, y, names, provenance=prov)

    if kind == "logistic-blobs":
        offset = separation / (2.0 * math.sqrt(d))
        labels = rng.fork("labels").bernoulli(0.5, n)
        x = rng.fork("features").normal((n, d))
        x += np.where(labels[:, None] > 0, offset, -offset)
        prov = {"kind": kind, "separation": separation, "seed": seed,
                "center_offset": offset}
        return Dataset(x, labels.astype(np.float64), names, provenance=prov)

    if d < 5:
        raise ValueError("friedman needs at least five features")
    x = rng.fork("features").uniform(0.0, 1.0, (n, d))
    y = (10.0 * np.sin(np.pi * x[:, 0] * x[:, 1])
         + 20.0 * (x[:, 2] - 0.5) ** 2 + 10.0 * x[:, 3] + 5.0 * x[:, 4])
    y = y + noise * rng.fork("noise").normal(n)
    prov = {"kind": kind, "noise": noise, "seed": seed}
    return Dataset(x, y, names, provenance=prov)


def friedman_surface(features: np.ndarray) -> np.ndarray:
    """Noise-free friedman targets, usable as an oracle."""
    x = np.asarray(features, dtype=np.float64)
    return (10.0 * np.sin(np.pi * x[:, 0] * x[:, 1])
            + 20.0 * (x[:, 2] - 0.5) ** 2 + 10.0 * x[:, 3]
            + 5.0 * x[:, 4])


def dataset_to_csv(dataset: Dataset, path, target: str = "target") -> None:
    save_csv(dataset, Path(path), target)
