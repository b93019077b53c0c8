"""Second-order gradient tree boosting for binary logloss.

Trees are grown depth-wise with an exact greedy split search. Each node keeps
its gradient/hessian sums, sample count and score so that trained models can
later be revised on another domain's data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .objective import grad_hess, leaf_weight, mean_logloss, node_score
from .tree import Ensemble, Tree, internal, leaf

# relative slack under which two candidate gains count as tied
GAIN_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Boosting hyperparameters.

    ``max_depth`` counts edges, so ``max_depth=0`` grows a single leaf.
    """

    num_trees: int = 100
    max_depth: int = 3
    shrinkage: float = 0.1
    l2_reg: float = 1.0
    leaf_penalty: float = 0.0
    min_child_samples: int = 1
    min_split_gain: float = 0.0
    row_subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.num_trees, (int, np.integer)) and self.num_trees >= 0):
            raise ValueError("num_trees must be a non-negative integer")
        if not (isinstance(self.max_depth, (int, np.integer)) and self.max_depth >= 0):
            raise ValueError("max_depth must be a non-negative integer")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")
        if not self.l2_reg >= 0.0:
            raise ValueError("l2_reg must be >= 0")
        if not self.leaf_penalty >= 0.0:
            raise ValueError("leaf_penalty must be >= 0")
        if not (isinstance(self.min_child_samples, (int, np.integer))
                and self.min_child_samples >= 1):
            raise ValueError("min_child_samples must be a positive integer")
        if not self.min_split_gain >= 0.0:
            raise ValueError("min_split_gain must be >= 0")
        if not 0.0 < self.row_subsample <= 1.0:
            raise ValueError("row_subsample must lie in (0, 1]")


class NodeStats(NamedTuple):
    G: float
    H: float
    count: int


class SplitEvaluation(NamedTuple):
    feature: int
    threshold: float
    gain: float
    left: NodeStats
    right: NodeStats


def midpoint(lo: float, hi: float) -> float:
    """Threshold strictly above ``lo`` and at most ``hi``, so ``x < t`` iff ``x <= lo``."""
    mid = lo + (hi - lo) / 2.0
    if not lo < mid <= hi:
        mid = hi
    return mid


def _scan_sorted(xs, gs, hs, l2_reg, leaf_penalty, min_child_samples=1):
    cg = np.cumsum(gs)
    ch = np.cumsum(hs)
    n = xs.shape[0]
    G, H = cg[-1], ch[-1]
    # cut after position i (0-based) wherever the next value differs
    cut = np.flatnonzero(xs[:-1] < xs[1:])
    nl = cut + 1
    ok = (nl >= min_child_samples) & (n - nl >= min_child_samples)
    cut, nl = cut[ok], nl[ok]
    GL, HL = cg[cut], ch[cut]
    GR, HR = G - GL, H - HL
    gains = 0.5 * (GL * GL / (HL + l2_reg) + GR * GR / (HR + l2_reg)
                   - G * G / (H + l2_reg)) - leaf_penalty
    lo, hi = xs[cut], xs[cut + 1]
    thresholds = lo + (hi - lo) / 2.0
    bad = ~((lo < thresholds) & (thresholds <= hi))
    thresholds[bad] = hi[bad]
    return thresholds, gains, nl, GL, HL


def scan_feature(values, g, h, l2_reg, leaf_penalty, min_child_samples=1):
    """Gains of every midpoint threshold on one feature.

    Returns ``(thresholds, gains, left_counts, GL, HL)`` for admissible cut
    positions (both children hold at least ``min_child_samples`` rows), with
    thresholds in increasing order.
    """
    order = np.argsort(values, kind="stable")
    return _scan_sorted(values[order], g[order], h[order], l2_reg, leaf_penalty,
                        min_child_samples)


def pick_best(candidates):
    """Choose among ``(gain, feature, threshold, payload)`` tuples.

    Highest gain wins; gains within a relative ``GAIN_TIE_RTOL`` of the best
    are ties, settled by lower feature index then lower threshold.
    """
    if not candidates:
        return None
    best = max(c[0] for c in candidates)
    tol = GAIN_TIE_RTOL * max(1.0, abs(best))
    tied = [c for c in candidates if c[0] >= best - tol]
    return min(tied, key=lambda c: (c[1], c[2]))


def _presort(X, sample_ids):
    """Per-feature orderings of ``sample_ids`` (ascending ids within ties)."""
    cols = X[sample_ids]
    return sample_ids[np.argsort(cols, axis=0, kind="stable")].T.copy()


def _best_split_sorted(sorted_ids, X, g, h, config) -> Optional[SplitEvaluation]:
    # sorted_ids: (d, m) sample ids ordered by each feature
    if sorted_ids.shape[1] < 2 * config.min_child_samples:
        return None
    candidates = []
    for f in range(sorted_ids.shape[0]):
        ids = sorted_ids[f]
        thr, gains, *_ = _scan_sorted(X[ids, f], g[ids], h[ids], config.l2_reg,
                                      config.leaf_penalty, config.min_child_samples)
        if gains.size == 0:
            continue
        best = gains.max()
        tol = GAIN_TIE_RTOL * max(1.0, abs(best))
        i = int(np.flatnonzero(gains >= best - tol)[0])
        candidates.append((float(gains[i]), f, float(thr[i]), None))
    choice = pick_best(candidates)
    if choice is None or not choice[0] > config.min_split_gain:
        return None
    gain, f, t, _ = choice
    ids = np.sort(sorted_ids[0])
    go_left = X[ids, f] < t
    lids, rids = ids[go_left], ids[~go_left]
    left = NodeStats(float(g[lids].sum()), float(h[lids].sum()), int(lids.size))
    right = NodeStats(float(g[rids].sum()), float(h[rids].sum()), int(rids.size))
    return SplitEvaluation(f, t, gain, left, right)


def find_best_split(sample_ids, X, g, h, config: TrainConfig) -> Optional[SplitEvaluation]:
    """Exact greedy split search over every feature for the rows ``sample_ids``.

    Thresholds sit at midpoints between consecutive distinct values. Returns
    ``None`` when no split leaves ``min_child_samples`` rows on both sides
    with gain above ``min_split_gain``.
    """
    sample_ids = np.sort(np.asarray(sample_ids, dtype=np.int64))
    if sample_ids.size < max(2, 2 * config.min_child_samples):
        return None
    return _best_split_sorted(_presort(X, sample_ids), X, g, h, config)


def build_tree(X, g, h, config: TrainConfig, sample_ids=None, presorted=None) -> Tree:
    """Grow one tree breadth-first; node ids follow breadth-first order.

    ``presorted`` is an optional ``(d, n)`` array of row orderings of the
    whole of ``X`` per feature, reused across trees to avoid re-sorting.
    """
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot build a tree on an empty dataset")
    if sample_ids is None:
        sample_ids = np.arange(n)
    sample_ids = np.sort(np.asarray(sample_ids, dtype=np.int64))
    if presorted is None:
        sorted_ids = _presort(X, sample_ids)
    elif sample_ids.size == n:
        sorted_ids = presorted
    else:
        member = np.zeros(n, dtype=bool)
        member[sample_ids] = True
        sorted_ids = presorted[member[presorted]].reshape(X.shape[1], -1)
    lam = config.l2_reg
    nodes = []
    next_id = 1
    in_node = np.zeros(n, dtype=bool)
    level = [(0, sorted_ids)]
    for depth in range(config.max_depth + 1):
        next_level = []
        for nid, sids in level:
            ids = sids[0]
            # sums in ascending-id order, independent of the feature ordering
            ids_asc = np.sort(ids)
            G, H = float(g[ids_asc].sum()), float(h[ids_asc].sum())
            score = node_score(G, H, lam)
            split = None
            if depth < config.max_depth:
                split = _best_split_sorted(sids, X, g, h, config)
            if split is None:
                nodes.append(leaf(nid, config.shrinkage * leaf_weight(G, H, lam),
                                  G=G, H=H, count=int(ids.size), score=score))
                continue
            lid, rid = next_id, next_id + 1
            next_id += 2
            nodes.append(internal(nid, split.feature, split.threshold, lid, rid,
                                  G=G, H=H, count=int(ids.size), score=score,
                                  gain=split.gain))
            in_node[:] = False
            in_node[ids] = X[ids, split.feature] < split.threshold
            go_left = in_node[sids]
            d = sids.shape[0]
            next_level.append((lid, sids[go_left].reshape(d, -1)))
            next_level.append((rid, sids[~go_left].reshape(d, -1)))
        level = next_level
        if not level:
            break
    return Tree.from_nodes(nodes, lam)


def _row_sample(n, rate, seed, tree_index):
    if rate >= 1.0:
        return np.arange(n)
    rng = np.random.default_rng([seed, tree_index])
    k = max(1, int(math.floor(rate * n)))
    return np.sort(rng.choice(n, size=k, replace=False))


def train(X, y, num_trees: int, max_depth: int, base: Optional[Ensemble] = None,
          config: Optional[TrainConfig] = None, feature_names=None,
          callback: Optional[Callable] = None) -> Ensemble:
    """Append ``num_trees`` trees of depth ``max_depth`` to ``base``.

    ``num_trees`` and ``max_depth`` override the matching fields of
    ``config``. ``callback(i, margins, loss)`` is called before tree ``i``
    is grown with the training margins it will fit, and once more after the
    last tree with ``i == num_trees``.
    """
    config = config or TrainConfig()
    config = TrainConfig(**{**config.__dict__, "num_trees": num_trees,
                            "max_depth": max_depth})
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    if feature_names is None:
        feature_names = (base.feature_names if base is not None
                         else tuple(f"f{i}" for i in range(X.shape[1])))
    if base is None:
        base = Ensemble(trees=(), base_score=0.0, feature_names=feature_names,
                        l2_reg=config.l2_reg, leaf_penalty=config.leaf_penalty,
                        shrinkage=config.shrinkage)
    elif base.n_features != X.shape[1]:
        raise ValueError(
            f"base model has {base.n_features} features, data has {X.shape[1]}")

    trees = list(base.trees)
    margins = base.predict_margin(X)
    presorted = _presort(X, np.arange(X.shape[0])) if config.num_trees else None
    for i in range(config.num_trees):
        if callback is not None:
            callback(i, margins.copy(), mean_logloss(y, margins))
        g, h = grad_hess(y, margins)
        ids = _row_sample(X.shape[0], config.row_subsample, config.seed, len(trees))
        tree = build_tree(X, g, h, config, ids, presorted)
        trees.append(tree)
        margins += tree.predict(X)
    if callback is not None:
        callback(config.num_trees, margins.copy(), mean_logloss(y, margins))
    return base.with_trees(trees, l2_reg=config.l2_reg,
                           leaf_penalty=config.leaf_penalty,
                           shrinkage=config.shrinkage)
