"""Ranking metrics and feature drift analytics."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

DECILES = tuple(np.round(np.arange(1, 10) / 10.0, 1))


def _binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(bool)


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores receive average ranks, so a tied positive/negative pair
    counts one half.
    """
    scores, pos = _binary(scores, labels)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def top_recall(scores, labels, fraction: float = 1e-4) -> float:
    """Share of all positives found among the top ``ceil(fraction * n)`` scores.

    Score ties at the cut-off are broken by original row order.
    """
    scores, pos = _binary(scores, labels)
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("top recall needs at least one positive")
    n = scores.size
    k = min(n, max(1, math.ceil(fraction * n - 1e-9)))
    order = np.lexsort((np.arange(n), -scores))
    return float(pos[order[:k]].sum() / n_pos)


def equal_frequency_bins(values, bins: int = 10) -> np.ndarray:
    """Bin index per value from its rank; equal values always share a bin.

    Depends only on the ordering of ``values``, so any strictly increasing
    transform leaves the assignment unchanged.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    sorted_vals = np.sort(values, kind="stable")
    first = np.searchsorted(sorted_vals, values, side="left")
    return (first * bins) // n


def information_value(values, labels, bins: int = 10, smoothing: float = 0.5) -> float:
    """Weight-of-evidence information value over equal-frequency bins.

    ``IV = sum_b (p_b - q_b) * ln(p_b / q_b)`` where ``p_b``/``q_b`` are the
    positive/negative shares of bin ``b`` after adding ``smoothing`` to every
    non-empty bin's class counts.
    """
    values, pos = _binary(values, labels)
    if bins < 2:
        raise ValueError("bins must be at least 2")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("information value needs both classes")
    b = equal_frequency_bins(values, bins)
    pos_counts = np.bincount(b[pos], minlength=bins).astype(float)
    neg_counts = np.bincount(b[~pos], minlength=bins).astype(float)
    used = (pos_counts + neg_counts) > 0
    pos_counts, neg_counts = pos_counts[used], neg_counts[used]
    k = used.sum()
    p = (pos_counts + smoothing) / (n_pos + smoothing * k)
    q = (neg_counts + smoothing) / (n_neg + smoothing * k)
    return float(max(0.0, np.sum((p - q) * np.log(p / q))))


def descending_ranks(values) -> np.ndarray:
    """1-based ranks by decreasing value; ties go to the lower index first."""
    values = np.asarray(values, dtype=np.float64)
    order = np.lexsort((np.arange(values.size), -values))
    ranks = np.empty(values.size, dtype=np.int64)
    ranks[order] = np.arange(1, values.size + 1)
    return ranks


@dataclass(frozen=True)
class FeatureDrift:
    name: str
    index: int
    deciles_s: tuple
    deciles_t: tuple
    iv_s: float
    iv_t: float
    rank_s: int
    rank_t: int

    @property
    def rank_diff(self) -> int:
        return abs(self.rank_s - self.rank_t)


@dataclass(frozen=True)
class DriftReport:
    features: tuple

    def feature(self, name: str) -> FeatureDrift:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def sorted_by_source_rank(self) -> list:
        return sorted(self.features, key=lambda f: f.rank_s)

    def to_table(self) -> str:
        """Tab-separated table ordered by source IV rank."""
        cols = (["feat_id", "IV_s", "rank_s", "IV_t", "rank_t", "rank_diff"]
                + [f"q{int(q * 100)}_s" for q in DECILES]
                + [f"q{int(q * 100)}_t" for q in DECILES])
        buf = io.StringIO()
        buf.write("\t".join(cols) + "\n")
        for f in self.sorted_by_source_rank():
            row = [f.name, format(f.iv_s, ".6f"), str(f.rank_s), format(f.iv_t, ".6f"),
                   str(f.rank_t), str(f.rank_diff)]
            row += [repr(v) for v in f.deciles_s] + [repr(v) for v in f.deciles_t]
            buf.write("\t".join(row) + "\n")
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{"feature": f.name, "iv_s": f.iv_s, "iv_t": f.iv_t, "rank_s": f.rank_s,
                 "rank_t": f.rank_t, "rank_diff": f.rank_diff,
                 "deciles_s": list(f.deciles_s), "deciles_t": list(f.deciles_t)}
                for f in self.sorted_by_source_rank()]
        return json.dumps({"deciles": list(DECILES), "features": rows},
                          sort_keys=True, indent=1) + "\n"


def drift_report(source, target, bins: int = 10) -> DriftReport:
    """Per-feature deciles and IV ranks on two datasets with shared features."""
    if source.feature_names != target.feature_names:
        raise ValueError("source and target must share the same feature space")
    d = source.n_features
    iv_s = np.array([information_value(source.features[:, j], source.labels, bins)
                     for j in range(d)])
    iv_t = np.array([information_value(target.features[:, j], target.labels, bins)
                     for j in range(d)])
    rank_s, rank_t = descending_ranks(iv_s), descending_ranks(iv_t)
    q = np.array(DECILES)
    feats = []
    for j, name in enumerate(source.feature_names):
        feats.append(FeatureDrift(
            name=name, index=j,
            deciles_s=tuple(float(v) for v in np.quantile(source.features[:, j], q)),
            deciles_t=tuple(float(v) for v in np.quantile(target.features[:, j], q)),
            iv_s=float(iv_s[j]), iv_t=float(iv_t[j]),
            rank_s=int(rank_s[j]), rank_t=int(rank_t[j])))
    return DriftReport(tuple(feats))
