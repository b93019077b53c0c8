"""Revising source-domain trees on target-domain data.

A source tree keeps its split features; what changes is thresholds (gain
based or fractile re-split), leaf weights (re-weight) and how branches with
too few target samples are handled (prune to a leaf or discount the source
weights). :func:`one_round` and :func:`multi_round` chain these revisions with
ordinary boosting on both domains.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
from dataclasses import dataclass, replace
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from . import model_store
from .dataset import Dataset
from .engine import TrainConfig, midpoint, pick_best, scan_feature, train
from .objective import grad_hess, leaf_weight, node_score, split_gain
from .tree import Ensemble, Tree, TreeNode, internal, leaf

RESPLIT_MODES = ("gain_based", "fractile", "off")
RARE_POLICIES = ("prune", "discount", "keep")
ACTIONS = ("resplit", "reweight", "prune", "discount", "skip")
_ORIGIN_OF = {"resplit": "revised", "reweight": "revised", "prune": "pruned",
              "discount": "discounted", "skip": "source"}


class ReviseError(ValueError):
    pass


@dataclass(frozen=True)
class ReviseConfig:
    """Revision policy.

    ``l2_reg``, ``leaf_penalty`` and ``shrinkage`` are the target-side
    constants used for recomputed gains and weights. ``rare_branch_policy``
    ``"keep"`` leaves rare branches untouched and is only valid without
    re-weighting, so raw source weights never sit next to revised ones.
    """

    resplit_mode: str = "gain_based"
    reweight: bool = True
    rare_branch_policy: str = "discount"
    min_samples_threshold: int = 30
    discount_factor: float = 0.1
    l2_reg: float = 1.0
    leaf_penalty: float = 0.0
    shrinkage: float = 0.1

    def __post_init__(self):
        if self.resplit_mode not in RESPLIT_MODES:
            raise ValueError(f"resplit_mode must be one of {RESPLIT_MODES}")
        if self.rare_branch_policy not in RARE_POLICIES:
            raise ValueError(f"rare_branch_policy must be one of {RARE_POLICIES}")
        if not (isinstance(self.min_samples_threshold, (int, np.integer))
                and self.min_samples_threshold >= 1):
            raise ValueError("min_samples_threshold must be a positive integer")
        if not 0.0 < self.discount_factor <= 1.0:
            raise ValueError("discount_factor must lie in (0, 1]")
        if not self.l2_reg >= 0.0 or not self.leaf_penalty >= 0.0:
            raise ValueError("l2_reg and leaf_penalty must be >= 0")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")
        if self.reweight and self.rare_branch_policy == "keep":
            raise ValueError("rare_branch_policy='keep' would mix raw source weights "
                             "with re-weighted leaves; use prune or discount")

    @classmethod
    def passthrough(cls, **kw) -> "ReviseConfig":
        """No re-split, no re-weight, rare branches kept: trees transfer unchanged."""
        return cls(resplit_mode="off", reweight=False, rare_branch_policy="keep", **kw)

    @property
    def is_passthrough(self) -> bool:
        return (self.resplit_mode == "off" and not self.reweight
                and self.rare_branch_policy == "keep")


@dataclass(frozen=True)
class TraceRecord:
    node_id: int
    action: str
    feature: Optional[int]
    is_leaf: bool                 # in the output tree
    split_val_s: Optional[float]
    split_gain_s: Optional[float]
    count_s: Optional[int]
    score_s: Optional[float]
    weight_s: Optional[float]
    split_val_t: Optional[float]
    split_gain_t: Optional[float]
    count_t: int
    score_t: float
    weight_t: Optional[float]
    G_t: float
    H_t: float
    node_gain_t: Optional[float] = None   # gain stored on the output node

    @property
    def delta_score(self) -> Optional[float]:
        if self.score_s is None:
            return None
        return abs(self.score_t - self.score_s)


TABLE_COLUMNS = ("node_id", "feat_id", "split_val_s", "split_gain_s", "inst#_s",
                 "score_s", "split_val_t", "split_gain_t", "inst#_t", "score_t",
                 "delta_score", "action")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


@dataclass(frozen=True)
class ReviseTrace:
    """Per-node log of one tree revision, in output-node id order."""

    records: tuple
    l2_reg: float
    unchanged: bool = False   # the source tree was passed through verbatim

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def record(self, node_id: int) -> TraceRecord:
        for r in self.records:
            if r.node_id == node_id:
                return r
        raise KeyError(node_id)

    def rows(self) -> list:
        out = []
        for r in self.records:
            out.append([r.node_id, r.feature, r.split_val_s, r.split_gain_s, r.count_s,
                        r.score_s, r.split_val_t, r.split_gain_t, r.count_t, r.score_t,
                        r.delta_score, r.action])
        return out

    def to_table(self, tree_index: Optional[int] = None, header: bool = True) -> str:
        buf = io.StringIO()
        cols = (("tree",) if tree_index is not None else ()) + TABLE_COLUMNS
        if header:
            buf.write("\t".join(cols) + "\n")
        for row in self.rows():
            if tree_index is not None:
                row = [tree_index] + row
            buf.write("\t".join(_cell(v) for v in row) + "\n")
        return buf.getvalue()

    def replay(self, source_tree: Tree) -> Tree:
        """Rebuild the revised tree from ``source_tree`` and this trace."""
        if self.unchanged:
            return source_tree
        nodes = []
        for r in self.records:
            src = source_tree.node(r.node_id)
            origin = _ORIGIN_OF[r.action]
            if r.is_leaf:
                nodes.append(leaf(r.node_id, r.weight_t, G=r.G_t, H=r.H_t,
                                  count=r.count_t, score=r.score_t, origin=origin))
            else:
                nodes.append(internal(r.node_id, src.feature, r.split_val_t, src.left,
                                      src.right, G=r.G_t, H=r.H_t, count=r.count_t,
                                      score=r.score_t, gain=r.node_gain_t,
                                      origin=origin))
        return Tree.from_nodes(nodes, self.l2_reg)


def traces_table(traces: Sequence[ReviseTrace]) -> str:
    """All traces of an ensemble as one tab-separated table with a tree column."""
    parts = ["tree\t" + "\t".join(TABLE_COLUMNS) + "\n"]
    for i, tr in enumerate(traces):
        parts.append(tr.to_table(tree_index=i, header=False))
    return "".join(parts)


def fractile_resplit(source_left_fraction: float, node_samples) -> Optional[float]:
    """Threshold sending the same fraction of ``node_samples`` left as on the source side.

    Takes the lower nearest-rank quantile and moves it to the midpoint toward
    the next distinct value. If that quantile is the largest value the
    midpoint toward the previous distinct value is used instead; ``None``
    means every sample has the same value.
    """
    v = np.sort(np.asarray(node_samples, dtype=np.float64))
    n = v.size
    if n < 2:
        raise ValueError("fractile re-split needs at least two samples")
    if not 0.0 < source_left_fraction < 1.0:
        raise ValueError("source_left_fraction must lie in (0, 1)")
    k = min(n, max(1, math.ceil(source_left_fraction * n - 1e-9)))
    lo = v[k - 1]
    above = v[k:][v[k:] > lo]
    if above.size:
        return midpoint(lo, above[0])
    below = v[:k][v[:k] < lo]
    if below.size:
        return midpoint(below[-1], lo)
    return None


def _partition_gain(GL, HL, GR, HR, lam, eta):
    if HL + lam > 0 and HR + lam > 0:
        return split_gain((GL, HL), (GR, HR), lam, eta)
    return None


class _Reviser:
    def __init__(self, source_tree, X, g, h, cfg, source_shrinkage):
        self.src = source_tree
        self.X, self.g, self.h = X, g, h
        self.cfg = cfg
        self.source_shrinkage = source_shrinkage
        self.nodes: List[TreeNode] = []
        self.records: List[TraceRecord] = []

    def stats(self, ids):
        return float(self.g[ids].sum()), float(self.h[ids].sum()), int(ids.size)

    def emit(self, src: TreeNode, action, ids, *, threshold=None, weight=None,
             searched_gain=None, child_ids=None):
        lam, eta = self.cfg.l2_reg, self.cfg.leaf_penalty
        G, H, count = self.stats(ids)
        score = node_score(G, H, lam)
        origin = _ORIGIN_OF[action]
        node_gain = None
        if weight is not None:
            self.nodes.append(leaf(src.node_id, weight, G=G, H=H, count=count,
                                   score=score, origin=origin))
        else:
            left_ids, right_ids = child_ids
            GL, HL, _ = self.stats(left_ids)
            GR, HR, _ = self.stats(right_ids)
            node_gain = _partition_gain(GL, HL, GR, HR, lam, eta)
            self.nodes.append(internal(src.node_id, src.feature, threshold, src.left,
                                       src.right, G=G, H=H, count=count, score=score,
                                       gain=node_gain, origin=origin))
        self.records.append(TraceRecord(
            node_id=src.node_id, action=action, feature=src.feature,
            is_leaf=weight is not None,
            split_val_s=src.threshold, split_gain_s=src.gain, count_s=src.count,
            score_s=src.score, weight_s=src.weight,
            split_val_t=threshold,
            split_gain_t=searched_gain if searched_gain is not None else node_gain,
            count_t=count, score_t=score, weight_t=weight, G_t=G, H_t=H,
            node_gain_t=node_gain))

    def route(self, src, ids, threshold):
        go_left = self.X[ids, src.feature] < threshold
        return ids[go_left], ids[~go_left]

    def visit(self, nid, ids):
        src = self.src.node(nid)
        cfg = self.cfg
        if ids.size < cfg.min_samples_threshold:
            return self.rare(nid, ids)
        if src.is_leaf:
            if cfg.reweight:
                G, H, _ = self.stats(ids)
                w = cfg.shrinkage * leaf_weight(G, H, cfg.l2_reg)
                return self.emit(src, "reweight", ids, weight=w)
            return self.emit(src, "skip", ids, weight=src.weight)

        searched = None
        if cfg.resplit_mode == "gain_based":
            threshold, searched = self.best_threshold(src, ids)
            if threshold is None or not searched > 0.0:
                return self.rare(nid, ids, searched_gain=searched)
            action = "resplit"
        elif cfg.resplit_mode == "fractile":
            left = self.src.node(src.left)
            frac = left.count / src.count if src.count else 0.0
            threshold = None
            if ids.size >= 2 and 0.0 < frac < 1.0:
                threshold = fractile_resplit(frac, self.X[ids, src.feature])
            if threshold is None:
                return self.rare(nid, ids)
            action = "resplit"
        else:
            threshold, action = src.threshold, "skip"
        lids, rids = self.route(src, ids, threshold)
        self.emit(src, action, ids, threshold=threshold, searched_gain=searched,
                  child_ids=(lids, rids))
        self.visit(src.left, lids)
        self.visit(src.right, rids)

    def best_threshold(self, src, ids):
        if ids.size < 2:
            return None, None
        thr, gains, *_ = scan_feature(self.X[ids, src.feature], self.g[ids],
                                      self.h[ids], self.cfg.l2_reg,
                                      self.cfg.leaf_penalty)
        if gains.size == 0:
            return None, None
        choice = pick_best([(float(gv), 0, float(t), None) for gv, t in zip(gains, thr)])
        return choice[2], choice[0]

    def source_weight(self, src):
        if src.is_leaf:
            return src.weight
        if src.score is None:
            raise ReviseError(
                f"node {src.node_id} has no recorded score (stats-incomplete model)")
        return self.source_shrinkage * src.score

    def rare(self, nid, ids, searched_gain=None):
        cfg = self.cfg
        src = self.src.node(nid)
        if cfg.rare_branch_policy == "prune":
            if ids.size >= cfg.min_samples_threshold:
                G, H, _ = self.stats(ids)
                w = cfg.shrinkage * leaf_weight(G, H, cfg.l2_reg)
            else:
                w = cfg.discount_factor * self.source_weight(src)
            self.emit(src, "prune", ids, weight=w, searched_gain=searched_gain)
            return
        action = "discount" if cfg.rare_branch_policy == "discount" else "skip"
        self.copy_subtree(nid, ids, action, searched_gain)

    def copy_subtree(self, nid, ids, action, searched_gain=None):
        src = self.src.node(nid)
        if src.is_leaf:
            w = src.weight
            if action == "discount":
                w = self.cfg.discount_factor * src.weight
            self.emit(src, action, ids, weight=w, searched_gain=searched_gain)
            return
        lids, rids = self.route(src, ids, src.threshold)
        self.emit(src, action, ids, threshold=src.threshold,
                  searched_gain=searched_gain, child_ids=(lids, rids))
        self.copy_subtree(src.left, lids, action)
        self.copy_subtree(src.right, rids, action)


def revise_one_tree(prefix: Ensemble, source_tree: Tree, target: Dataset,
                    cfg: ReviseConfig, source_shrinkage: Optional[float] = None,
                    margins: Optional[np.ndarray] = None):
    """Revise ``source_tree`` on ``target`` given the already revised ``prefix``.

    ``margins`` may carry the precomputed target margins of ``prefix``.
    Returns ``(tree, trace)``. If the revision changes nothing (pass-through
    policy) the source tree is returned as is, statistics included; otherwise
    every output node carries target-side statistics.
    """
    if source_tree.max_feature() >= target.n_features:
        raise ReviseError("source tree uses features outside the target feature space")
    if target.n_rows == 0:
        raise ReviseError("empty target dataset")
    needs_stats = (cfg.resplit_mode == "fractile"
                   or cfg.rare_branch_policy == "discount")
    if needs_stats and not source_tree.stats_complete:
        raise ReviseError("source model is stats-incomplete (no per-node G/H/count); "
                          "fractile re-split and discount need them")
    if source_shrinkage is None:
        source_shrinkage = prefix.shrinkage
    X, y = target.features, target.labels
    if margins is None:
        margins = prefix.predict_margin(X)
    g, h = grad_hess(y, margins)
    rev = _Reviser(source_tree, X, g, h, cfg, source_shrinkage)
    rev.visit(0, np.arange(target.n_rows))
    records = tuple(sorted(rev.records, key=lambda r: r.node_id))
    if cfg.is_passthrough:
        return source_tree, ReviseTrace(records, source_tree.l2_reg, unchanged=True)
    trace = ReviseTrace(records, cfg.l2_reg)
    return Tree.from_nodes(rev.nodes, cfg.l2_reg), trace


# -- workflows ---------------------------------------------------------------

class TransferResult(NamedTuple):
    model: Ensemble
    traces: list
    source_model: Ensemble


def _exchange(model: Ensemble, exchange_dir) -> Ensemble:
    """Round-trip a model through a file, as a cross-domain hand-off would."""
    if exchange_dir is None:
        return model
    fd, path = tempfile.mkstemp(dir=exchange_dir, suffix=".model")
    os.close(fd)
    try:
        model_store.save(model, path)
        return model_store.load(path)
    finally:
        os.unlink(path)


def _check_domains(source: Dataset, target: Dataset):
    if source.feature_names != target.feature_names:
        raise ReviseError("source and target domains must share the same feature space")


def _empty(names, cfg: ReviseConfig) -> Ensemble:
    return Ensemble(trees=(), base_score=0.0, feature_names=names, l2_reg=cfg.l2_reg,
                    leaf_penalty=cfg.leaf_penalty, shrinkage=cfg.shrinkage)


def one_round(source: Dataset, target: Dataset, src_trees: int, tgt_trees: int,
              src_depth: int, tgt_depth: int,
              train_cfg_s: Optional[TrainConfig] = None,
              train_cfg_t: Optional[TrainConfig] = None,
              revise_cfg: Optional[ReviseConfig] = None,
              exchange_dir=None) -> TransferResult:
    """Train a batch of source trees, revise them in order, then boost on target."""
    _check_domains(source, target)
    train_cfg_s = train_cfg_s or TrainConfig()
    train_cfg_t = train_cfg_t or TrainConfig()
    revise_cfg = revise_cfg or ReviseConfig()
    names = source.feature_names

    m_src = train(source.features, source.labels, src_trees, src_depth, None,
                  train_cfg_s, names)
    m_src = _exchange(m_src, exchange_dir)

    revised = _empty(names, revise_cfg)
    margins = revised.predict_margin(target.features)
    traces = []
    for tree in m_src.trees:
        new, trace = revise_one_tree(revised, tree, target, revise_cfg,
                                     m_src.shrinkage, margins)
        revised = revised.with_trees(revised.trees + (new,))
        margins = margins + new.predict(target.features)
        traces.append(trace)

    model = train(target.features, target.labels, tgt_trees, tgt_depth, revised,
                  train_cfg_t, names)
    model = replace(model, provenance={
        "workflow": "oneround", "src_trees": src_trees, "src_depth": src_depth,
        "tgt_trees": tgt_trees, "tgt_depth": tgt_depth})
    return TransferResult(model, traces, m_src)


def multi_round(source: Dataset, target: Dataset, src_trees: int, tgt_trees: int,
                src_depth: int, tgt_depth: int,
                train_cfg_s: Optional[TrainConfig] = None,
                train_cfg_t: Optional[TrainConfig] = None,
                revise_cfg: Optional[ReviseConfig] = None,
                exchange_dir=None,
                source_callback: Optional[Callable] = None) -> TransferResult:
    """Alternate one source tree and its revision, writing each revision back.

    Every new source tree is fit against the revised trees so far.
    ``source_callback(round, margins)`` sees the source margins each new tree
    is fit to.
    """
    _check_domains(source, target)
    train_cfg_s = train_cfg_s or TrainConfig()
    train_cfg_t = train_cfg_t or TrainConfig()
    revise_cfg = revise_cfg or ReviseConfig()
    names = source.feature_names

    revised = _empty(names, revise_cfg)
    source_trees = []
    traces = []
    margins = revised.predict_margin(target.features)
    for i in range(src_trees):
        cb = None
        if source_callback is not None:
            def cb(it, m, loss, _i=i):
                if it == 0:
                    source_callback(_i, m)
        base = revised.with_trees(revised.trees, shrinkage=train_cfg_s.shrinkage,
                                  l2_reg=train_cfg_s.l2_reg,
                                  leaf_penalty=train_cfg_s.leaf_penalty)
        m_src = train(source.features, source.labels, 1, src_depth, base,
                      train_cfg_s, names, callback=cb)
        m_src = _exchange(m_src, exchange_dir)
        tree = m_src.trees[-1]
        source_trees.append(tree)
        new, trace = revise_one_tree(revised, tree, target, revise_cfg,
                                     train_cfg_s.shrinkage, margins)
        revised = _exchange(revised.with_trees(revised.trees + (new,)), exchange_dir)
        margins = margins + new.predict(target.features)
        traces.append(trace)

    model = train(target.features, target.labels, tgt_trees, tgt_depth, revised,
                  train_cfg_t, names)
    model = replace(model, provenance={
        "workflow": "multiround", "src_trees": src_trees, "src_depth": src_depth,
        "tgt_trees": tgt_trees, "tgt_depth": tgt_depth})
    m_src = Ensemble(trees=source_trees, base_score=0.0, feature_names=names,
                     l2_reg=train_cfg_s.l2_reg, leaf_penalty=train_cfg_s.leaf_penalty,
                     shrinkage=train_cfg_s.shrinkage)
    return TransferResult(model, traces, m_src)


def target_only(target: Dataset, tgt_trees: int, tgt_depth: int,
                train_cfg_t: Optional[TrainConfig] = None) -> Ensemble:
    """Baseline trained on the target domain alone."""
    model = train(target.features, target.labels, tgt_trees, tgt_depth, None,
                  train_cfg_t or TrainConfig(), target.feature_names)
    return replace(model, provenance={"workflow": "baseline1", "tgt_trees": tgt_trees,
                                      "tgt_depth": tgt_depth})
