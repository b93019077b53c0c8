"""Tree and ensemble data structures.

Trees are immutable values. Node ids are stable integers (root is 0); revised
trees keep the ids of the source tree they came from, so ids need not be
contiguous after pruning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

from .objective import margin_to_prob, node_score

ORIGINS = ("source", "revised", "discounted", "pruned")

SCORE_TOL = 1e-9


class ModelError(ValueError):
    """A tree or ensemble violates a structural invariant."""


@dataclass(frozen=True)
class TreeNode:
    node_id: int
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional[int] = None
    right: Optional[int] = None
    weight: Optional[float] = None
    G: Optional[float] = None
    H: Optional[float] = None
    count: Optional[int] = None
    score: Optional[float] = None
    gain: Optional[float] = None
    origin: str = "source"

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def has_stats(self) -> bool:
        return self.G is not None and self.H is not None and self.count is not None


def leaf(node_id, weight, G=None, H=None, count=None, score=None, origin="source"):
    return TreeNode(node_id, weight=float(weight), G=G, H=H, count=count,
                    score=score, origin=origin)


def internal(node_id, feature, threshold, left, right, G=None, H=None,
             count=None, score=None, gain=None, origin="source"):
    return TreeNode(node_id, feature=int(feature), threshold=float(threshold),
                    left=int(left), right=int(right), G=G, H=H, count=count,
                    score=score, gain=gain, origin=origin)


@dataclass(frozen=True)
class Tree:
    """A binary regression tree; ``l2_reg`` is the lambda its node scores use."""

    nodes: tuple
    l2_reg: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "nodes",
                           tuple(sorted(self.nodes, key=lambda n: n.node_id)))
        self._check_topology()

    @classmethod
    def from_nodes(cls, nodes: Iterable[TreeNode], l2_reg: float = 1.0) -> "Tree":
        return cls(tuple(nodes), float(l2_reg))

    # -- structure ---------------------------------------------------------

    @cached_property
    def by_id(self) -> dict:
        return {n.node_id: n for n in self.nodes}

    def node(self, node_id: int) -> TreeNode:
        return self.by_id[node_id]

    @property
    def root(self) -> TreeNode:
        return self.by_id[0]

    @property
    def leaves(self) -> list:
        return [n for n in self.nodes if n.is_leaf]

    def _check_topology(self):
        ids = [n.node_id for n in self.nodes]
        if not ids:
            raise ModelError("broken tree topology: tree has no nodes")
        if len(set(ids)) != len(ids):
            raise ModelError("broken tree topology: duplicate node id")
        by_id = {n.node_id: n for n in self.nodes}
        if 0 not in by_id:
            raise ModelError("broken tree topology: missing root node 0")
        seen = set()
        stack = [0]
        while stack:
            nid = stack.pop()
            if nid in seen:
                raise ModelError(f"broken tree topology: node {nid} reached twice")
            seen.add(nid)
            node = by_id[nid]
            if node.origin not in ORIGINS:
                raise ModelError(f"node {nid} has unknown origin {node.origin!r}")
            if node.is_leaf:
                if node.weight is None or not math.isfinite(node.weight):
                    raise ModelError(f"leaf {nid} has no finite weight")
                continue
            if node.threshold is None or not math.isfinite(node.threshold):
                raise ModelError(f"node {nid} has no finite threshold")
            for child in (node.left, node.right):
                if child is None or child not in by_id:
                    raise ModelError(
                        f"broken tree topology: node {nid} references missing child {child}")
                stack.append(child)
        if len(seen) != len(by_id):
            orphans = sorted(set(by_id) - seen)
            raise ModelError(f"broken tree topology: unreachable nodes {orphans}")

    def depth(self) -> int:
        def _depth(nid):
            n = self.by_id[nid]
            if n.is_leaf:
                return 0
            return 1 + max(_depth(n.left), _depth(n.right))
        return _depth(0)

    def descendants(self, node_id: int) -> list:
        out = []
        stack = [node_id]
        while stack:
            n = self.by_id[stack.pop()]
            if not n.is_leaf:
                out.extend([n.left, n.right])
                stack.extend([n.right, n.left])
        return out

    @property
    def stats_complete(self) -> bool:
        return all(n.has_stats for n in self.nodes)

    def validate_stats(self):
        """Check count conservation and score consistency where stats exist."""
        for n in self.nodes:
            if n.count is not None and n.count < 0:
                raise ModelError(f"node {n.node_id} has negative count")
            if n.G is not None and n.H is not None and n.score is not None:
                expect = node_score(n.G, n.H, self.l2_reg)
                if abs(expect - n.score) > SCORE_TOL * max(1.0, abs(expect)):
                    raise ModelError(
                        f"node {n.node_id}: score {n.score!r} != -G/(H+lambda) = {expect!r}")
            if not n.is_leaf and n.count is not None:
                lc, rc = self.by_id[n.left].count, self.by_id[n.right].count
                if lc is not None and rc is not None and lc + rc != n.count:
                    raise ModelError(
                        f"node {n.node_id}: child counts {lc}+{rc} != {n.count}")

    # -- prediction --------------------------------------------------------

    @cached_property
    def _arrays(self):
        index = {n.node_id: i for i, n in enumerate(self.nodes)}
        size = len(self.nodes)
        feature = np.full(size, -1, dtype=np.int64)
        threshold = np.zeros(size)
        left = np.zeros(size, dtype=np.int64)
        right = np.zeros(size, dtype=np.int64)
        value = np.zeros(size)
        for i, n in enumerate(self.nodes):
            if n.is_leaf:
                value[i] = n.weight
                left[i] = right[i] = i
            else:
                feature[i] = n.feature
                threshold[i] = n.threshold
                left[i] = index[n.left]
                right[i] = index[n.right]
        return feature, threshold, left, right, value, index[0]

    def _route(self, X: np.ndarray) -> np.ndarray:
        feature, threshold, left, right, _, root = self._arrays
        pos = np.full(X.shape[0], root, dtype=np.int64)
        active = np.flatnonzero(feature[pos] >= 0)
        while active.size:
            p = pos[active]
            go_left = X[active, feature[p]] < threshold[p]
            pos[active] = np.where(go_left, left[p], right[p])
            active = active[feature[pos[active]] >= 0]
        return pos

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Return the node id of the leaf each row of ``X`` lands in."""
        ids = np.array([n.node_id for n in self.nodes], dtype=np.int64)
        return ids[self._route(X)]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._arrays[4][self._route(X)]

    def max_feature(self) -> int:
        return max((n.feature for n in self.nodes if not n.is_leaf), default=-1)

    def replace_nodes(self, changes: dict) -> "Tree":
        """Copy with nodes ``{node_id: {field: value}}`` replaced."""
        nodes = [replace(n, **changes[n.node_id]) if n.node_id in changes else n
                 for n in self.nodes]
        return Tree(tuple(nodes), self.l2_reg)


@dataclass(frozen=True)
class Ensemble:
    """Additive tree model: ``margin(x) = base_score + sum(tree(x))``."""

    trees: tuple = ()
    base_score: float = 0.0
    feature_names: tuple = ()
    l2_reg: float = 1.0
    leaf_penalty: float = 0.0
    shrinkage: float = 0.1
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if not math.isfinite(self.base_score):
            raise ModelError("base_score must be finite")
        d = len(self.feature_names)
        for i, t in enumerate(self.trees):
            if t.max_feature() >= d:
                raise ModelError(
                    f"tree {i} uses feature {t.max_feature()} but model has {d} features")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def stats_complete(self) -> bool:
        return all(t.stats_complete for t in self.trees)

    def with_trees(self, trees, **changes) -> "Ensemble":
        return replace(self, trees=tuple(trees), **changes)

    def _check_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} features, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite input")
        return X

    def predict_margin(self, X) -> np.ndarray:
        X = self._check_X(X)
        margin = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for t in self.trees:
            margin += t.predict(X)
        return margin

    def predict_prob(self, X) -> np.ndarray:
        return np.atleast_1d(margin_to_prob(self.predict_margin(X)))
