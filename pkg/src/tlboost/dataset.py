"""Datasets, CSV ingestion, negative sampling and a synthetic drift generator."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense feature matrix with binary labels; arrays are made read-only."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if X.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        n, d = X.shape
        if n < 1 or d < 1:
            raise DatasetError("empty dataset")
        if y.shape != (n,):
            raise DatasetError(f"expected {n} labels, got shape {y.shape}")
        if not np.all(np.isfinite(X)):
            raise DatasetError("non-finite feature")
        if not np.all((y == 0) | (y == 1)):
            raise DatasetError("label not binary")
        names = tuple(self.feature_names) or tuple(f"f{i}" for i in range(d))
        if len(names) != d:
            raise DatasetError(f"expected {d} feature names, got {len(names)}")
        if len(set(names)) != d:
            raise DatasetError("feature names must be unique")
        y = y.astype(np.int8)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def bad_rate(self) -> float:
        return self.n_positive / self.n_rows

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.feature_names)

    def same_contents(self, other: "Dataset") -> bool:
        return (self.feature_names == other.feature_names
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


# -- CSV ---------------------------------------------------------------------

def load_csv(path, label_column: str = "label") -> Dataset:
    if not os.path.exists(path):
        raise DatasetError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty dataset (no header)") from None
        if label_column not in header:
            raise DatasetError(f"{path}: label column {label_column!r} not found")
        li = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != li]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            values = []
            for i, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{path}:{lineno}: non-numeric cell {cell!r}") from None
                if i == li:
                    if v not in (0.0, 1.0):
                        raise DatasetError(f"{path}:{lineno}: label not binary ({cell!r})")
                    labels.append(int(v))
                else:
                    if not math.isfinite(v):
                        raise DatasetError(f"{path}:{lineno}: non-finite feature {cell!r}")
                    values.append(v)
            rows.append(values)
    if not rows:
        raise DatasetError(f"{path}: empty dataset")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels), names)


def write_csv(data: Dataset, path, label_column: str = "label") -> None:
    if label_column in data.feature_names:
        raise DatasetError(f"label column {label_column!r} clashes with a feature name")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(data.feature_names) + [label_column])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [str(int(y))])


# -- negative sampling -------------------------------------------------------

def negatives_to_keep(n_positive: int, target_bad_rate: float) -> int:
    """Largest negative count k with ``pos / (pos + k) >= target_bad_rate``."""
    k = math.floor(n_positive * (1.0 - target_bad_rate) / target_bad_rate + 1e-9)
    while k > 0 and n_positive / (n_positive + k) < target_bad_rate - 1e-12:
        k -= 1
    return k


def negative_sample(data: Dataset, target_bad_rate: float, seed: int = 0) -> Dataset:
    """Keep every positive and a uniform subsample of negatives.

    The result has the smallest bad rate that is still at least
    ``target_bad_rate``. Row order is preserved.
    """
    if not 0.0 < target_bad_rate <= 1.0:
        raise DatasetError("target_bad_rate must lie in (0, 1]")
    pos = np.flatnonzero(data.labels == 1)
    neg = np.flatnonzero(data.labels == 0)
    if pos.size == 0:
        raise DatasetError("negative sampling needs at least one positive")
    if target_bad_rate < data.bad_rate - 1e-12:
        raise DatasetError(
            f"target bad rate {target_bad_rate} is below the current rate {data.bad_rate}")
    k = negatives_to_keep(pos.size, target_bad_rate)
    if k >= neg.size:
        return data
    rng = np.random.default_rng(seed)
    kept = rng.choice(neg, size=k, replace=False)
    return data.subset(np.sort(np.concatenate([pos, kept])))


# -- synthetic domain pairs --------------------------------------------------

DRIFT_MODES = ("scale", "shape", "efficacy_loss", "label_drift")


@dataclass(frozen=True)
class GeneratorSpec:
    """Base distribution: iid standard normal features, logistic label rule.

    ``P(y=1 | x) = sigmoid(intercept + sum_j coefs[j] * x[j])`` over the first
    ``len(coefs)`` features; the remaining features are noise.
    """

    n_features: int = 10
    coefs: tuple = (2.5, -2.0, 1.5)
    intercept: float = -2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_features < len(self.coefs) or self.n_features < 1:
            raise DatasetError("n_features must cover every informative coefficient")


@dataclass(frozen=True)
class DriftSpec:
    """One drift transform applied to the target domain.

    scale
        observed ``x' = scale * x + offset`` on ``features``.
    shape
        latent values of ``features`` are drawn from a Gaussian mixture
        (``mixture_weights``, ``mixture_means``, ``mixture_sds``) instead of
        N(0, 1); the label rule is unchanged.
    efficacy_loss
        each observed value of ``features`` is replaced, with probability
        ``noise_level``, by an independent draw from its marginal.
    label_drift
        each target label is flipped with probability ``flip_rate``.
    """

    mode: str
    features: tuple = ()
    scale: float = 1.0
    offset: float = 0.0
    mixture_weights: tuple = (0.5, 0.5)
    mixture_means: tuple = (-1.5, 1.5)
    mixture_sds: tuple = (0.5, 0.5)
    noise_level: float = 0.0
    flip_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in DRIFT_MODES:
            raise DatasetError(f"unknown drift mode {self.mode!r}")
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        if self.mode == "scale" and not self.scale > 0:
            raise DatasetError("scale drift needs scale > 0")
        if self.mode == "shape":
            w = np.asarray(self.mixture_weights, dtype=float)
            if not (len(w) == len(self.mixture_means) == len(self.mixture_sds)
                    and len(w) > 0 and np.all(w >= 0) and abs(w.sum() - 1) < 1e-9
                    and all(s > 0 for s in self.mixture_sds)):
                raise DatasetError("invalid mixture parameters")
        if not 0.0 <= self.noise_level <= 1.0:
            raise DatasetError("noise_level must lie in [0, 1]")
        if not 0.0 <= self.flip_rate < 0.5:
            raise DatasetError("flip_rate must lie in [0, 0.5)")


def identity_drift() -> DriftSpec:
    return DriftSpec("scale", features=(), scale=1.0, offset=0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _draw(spec: GeneratorSpec, n: int, rng, drifts=()):
    X = rng.standard_normal((n, spec.n_features))
    for dr in drifts:
        if dr.mode == "shape":
            for f in dr.features:
                comp = rng.choice(len(dr.mixture_weights), size=n, p=dr.mixture_weights)
                X[:, f] = (np.asarray(dr.mixture_means)[comp]
                           + np.asarray(dr.mixture_sds)[comp] * rng.standard_normal(n))
    z = spec.intercept + X[:, :len(spec.coefs)] @ np.asarray(spec.coefs, dtype=float)
    y = (rng.random(n) < _sigmoid(z)).astype(np.int8)
    return X, y


def synth_domain_pair(base_spec: GeneratorSpec,
                      drift: Union[DriftSpec, Sequence[DriftSpec], None],
                      n_source: int, n_target: int):
    """Draw a (source, target) pair; target transforms applied in order.

    Returns two :class:`Dataset` objects sharing feature names.
    """
    if n_source < 1 or n_target < 1:
        raise DatasetError("sample counts must be positive")
    if drift is None:
        drifts = ()
    elif isinstance(drift, DriftSpec):
        drifts = (drift,)
    else:
        drifts = tuple(drift)
    for dr in drifts:
        if any(not 0 <= f < base_spec.n_features for f in dr.features):
            raise DatasetError("drift feature index out of range")
    names = tuple(f"f{i}" for i in range(base_spec.n_features))
    seed_drift = [dr.seed for dr in drifts]
    src_rng = np.random.default_rng([base_spec.seed, 0])
    tgt_rng = np.random.default_rng([base_spec.seed, 1] + seed_drift)
    Xs, ys = _draw(base_spec, n_source, src_rng)
    Xt, yt = _draw(base_spec, n_target, tgt_rng, drifts)
    for dr in drifts:
        if dr.mode == "scale":
            for f in dr.features:
                Xt[:, f] = dr.scale * Xt[:, f] + dr.offset
        elif dr.mode == "efficacy_loss":
            for f in dr.features:
                replace = tgt_rng.random(n_target) < dr.noise_level
                Xt[replace, f] = tgt_rng.permutation(Xt[:, f])[replace]
        elif dr.mode == "label_drift":
            flip = tgt_rng.random(n_target) < dr.flip_rate
            yt = np.where(flip, 1 - yt, yt).astype(np.int8)
    return Dataset(Xs, ys, names), Dataset(Xt, yt, names)


def train_test_split(data: Dataset, test_fraction: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n_rows)
    k = int(round(test_fraction * data.n_rows))
    return data.subset(np.sort(perm[k:])), data.subset(np.sort(perm[:k]))
