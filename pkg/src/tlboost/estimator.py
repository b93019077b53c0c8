"""scikit-learn compatible estimators wrapping the boosting and transfer code."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import Dataset
from .engine import TrainConfig, train
from .revise import ReviseConfig, multi_round, one_round
from .tree import Ensemble

WORKFLOWS = ("baseline1", "baseline2", "oneround", "multiround")


def _encode_binary(y):
    classes = unique_labels(y)
    if classes.size > 2:
        raise ValueError(f"only binary targets are supported, got classes {classes}")
    if classes.size == 1:
        # single-class fits are allowed; the class present maps to 1 if it is 1
        y01 = (y == 1).astype(np.int8) if classes[0] in (0, 1) else np.zeros(y.size, np.int8)
        return classes, y01
    return classes, (y == classes[1]).astype(np.int8)


class _BoostedClassifierMixin(ClassifierMixin):
    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.predict_margin(X)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = self.model_.predict_prob(check_array(X, dtype=np.float64))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        proba = self.predict_proba(X)[:, 1]
        if self.classes_.size == 1:
            return np.full(proba.shape, self.classes_[0])
        return self.classes_[(proba > 0.5).astype(int)]


class GradientBoostedTreeClassifier(_BoostedClassifierMixin, BaseEstimator):
    """Second-order gradient boosted trees for binary classification.

    Parameters
    ----------
    n_estimators : int, default=100
        Number of trees appended by ``fit``.
    max_depth : int, default=3
        Depth of every tree (root has depth 0).
    learning_rate : float, default=0.1
        Shrinkage baked into stored leaf weights.
    reg_lambda : float, default=1.0
        L2 penalty on leaf weights.
    leaf_penalty : float, default=0.0
        Per-leaf complexity penalty subtracted from split gains.
    min_child_samples : int, default=1
    min_split_gain : float, default=0.0
        A split is kept only if its gain is strictly above this value.
    subsample : float, default=1.0
        Row fraction drawn per tree without replacement.
    random_state : int, default=0
    init_model : Ensemble, optional
        Model whose trees are kept and extended by ``fit``.

    Attributes
    ----------
    model_ : Ensemble
    classes_ : ndarray
    train_loss_ : list of float
        Mean training logloss before each tree and after the last one.
    """

    def __init__(self, n_estimators=100, max_depth=3, learning_rate=0.1,
                 reg_lambda=1.0, leaf_penalty=0.0, min_child_samples=1,
                 min_split_gain=0.0, subsample=1.0, random_state=0,
                 init_model=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.leaf_penalty = leaf_penalty
        self.min_child_samples = min_child_samples
        self.min_split_gain = min_split_gain
        self.subsample = subsample
        self.random_state = random_state
        self.init_model = init_model

    def _config(self) -> TrainConfig:
        return TrainConfig(num_trees=self.n_estimators, max_depth=self.max_depth,
                           shrinkage=self.learning_rate, l2_reg=self.reg_lambda,
                           leaf_penalty=self.leaf_penalty,
                           min_child_samples=self.min_child_samples,
                           min_split_gain=self.min_split_gain,
                           row_subsample=self.subsample, seed=self.random_state or 0)

    def fit(self, X, y, feature_names=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y01 = _encode_binary(y)
        self.n_features_in_ = X.shape[1]
        losses = []
        self.model_ = train(X, y01, self.n_estimators, self.max_depth,
                            base=self.init_model, config=self._config(),
                            feature_names=feature_names,
                            callback=lambda i, m, loss: losses.append(loss))
        self.train_loss_ = losses
        return self


class TransferBoostClassifier(_BoostedClassifierMixin, BaseEstimator):
    """Boosted trees trained on a source domain and revised for a target domain.

    ``fit(X, y, X_source, y_source)`` takes the (scarce) target data first.

    Parameters
    ----------
    workflow : {"oneround", "multiround", "baseline1", "baseline2"}
        ``baseline1`` ignores the source data; ``baseline2`` transfers the
        source trees without revising them.
    source_trees, source_depth, target_trees, target_depth : int
    resplit : {"gain_based", "fractile", "off"}
    reweight : bool
    rare_branch_policy : {"discount", "prune", "keep"}
    min_samples_threshold : int
    discount_factor : float
    learning_rate, reg_lambda, leaf_penalty : float
        Shared by both domains and by the revision.
    random_state : int

    Attributes
    ----------
    model_ : Ensemble
    source_model_ : Ensemble or None
    revise_traces_ : list of ReviseTrace
    """

    def __init__(self, workflow="oneround", source_trees=10, source_depth=5,
                 target_trees=40, target_depth=5, resplit="gain_based",
                 reweight=True, rare_branch_policy="discount",
                 min_samples_threshold=30, discount_factor=0.1,
                 learning_rate=0.1, reg_lambda=1.0, leaf_penalty=0.0,
                 random_state=0):
        self.workflow = workflow
        self.source_trees = source_trees
        self.source_depth = source_depth
        self.target_trees = target_trees
        self.target_depth = target_depth
        self.resplit = resplit
        self.reweight = reweight
        self.rare_branch_policy = rare_branch_policy
        self.min_samples_threshold = min_samples_threshold
        self.discount_factor = discount_factor
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.leaf_penalty = leaf_penalty
        self.random_state = random_state

    def _revise_config(self) -> ReviseConfig:
        common = dict(min_samples_threshold=self.min_samples_threshold,
                      discount_factor=self.discount_factor, l2_reg=self.reg_lambda,
                      leaf_penalty=self.leaf_penalty, shrinkage=self.learning_rate)
        if self.workflow == "baseline2":
            return ReviseConfig.passthrough(**common)
        return ReviseConfig(resplit_mode=self.resplit, reweight=self.reweight,
                            rare_branch_policy=self.rare_branch_policy, **common)

    def fit(self, X, y, X_source=None, y_source=None):
        if self.workflow not in WORKFLOWS:
            raise ValueError(f"workflow must be one of {WORKFLOWS}")
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y01 = _encode_binary(y)
        self.n_features_in_ = X.shape[1]
        cfg = TrainConfig(shrinkage=self.learning_rate, l2_reg=self.reg_lambda,
                          leaf_penalty=self.leaf_penalty, seed=self.random_state or 0)
        target = Dataset(X, y01)
        self.revise_traces_ = []
        self.source_model_ = None
        if self.workflow == "baseline1":
            self.model_ = train(X, y01, self.target_trees, self.target_depth,
                                config=cfg)
            return self
        if X_source is None or y_source is None:
            raise ValueError(f"workflow {self.workflow!r} needs X_source and y_source")
        Xs, ys = check_X_y(X_source, y_source, dtype=np.float64)
        if Xs.shape[1] != X.shape[1]:
            raise ValueError("source and target must have the same number of features")
        source = Dataset(Xs, (ys == self.classes_[-1]).astype(np.int8))
        run = multi_round if self.workflow == "multiround" else one_round
        result = run(source, target, self.source_trees, self.target_trees,
                     self.source_depth, self.target_depth, cfg, cfg,
                     self._revise_config())
        self.model_ = result.model
        self.source_model_ = result.source_model
        self.revise_traces_ = result.traces
        return self
