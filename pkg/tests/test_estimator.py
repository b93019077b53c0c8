import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import cross_val_score

from oracles import logistic_data
from tlboost import model_store
from tlboost.dataset import DriftSpec, GeneratorSpec, synth_domain_pair
from tlboost.engine import train
from tlboost.estimator import GradientBoostedTreeClassifier, TransferBoostClassifier
from tlboost.revise import one_round


@pytest.fixture(scope="module")
def data():
    return logistic_data(600, d=5, seed=31)


@pytest.fixture(scope="module")
def domains():
    return synth_domain_pair(GeneratorSpec(5, seed=2),
                             DriftSpec("scale", features=(0,), scale=2.0), 3000, 300)


class TestGradientBoostedTreeClassifier:
    def test_params_and_clone(self):
        est = GradientBoostedTreeClassifier(n_estimators=7, learning_rate=0.2)
        params = est.get_params()
        assert params["n_estimators"] == 7 and params["learning_rate"] == 0.2
        twin = clone(est)
        assert twin.get_params() == params and not hasattr(twin, "model_")

    def test_matches_core_training(self, data):
        est = GradientBoostedTreeClassifier(n_estimators=5, max_depth=3).fit(
            data.features, data.labels)
        core = train(data.features, data.labels, 5, 3)
        assert model_store.models_equal(est.model_, core)
        assert np.array_equal(est.decision_function(data.features),
                              core.predict_margin(data.features))
        assert len(est.train_loss_) == 6

    def test_string_labels(self, data):
        y = np.where(data.labels == 1, "fraud", "ok")
        est = GradientBoostedTreeClassifier(n_estimators=10).fit(data.features, y)
        assert set(est.predict(data.features)) <= {"fraud", "ok"}
        proba = est.predict_proba(data.features)
        assert proba.shape == (data.n_rows, 2)
        assert np.allclose(proba.sum(axis=1), 1.0)
        # classes_ is sorted, so column 1 is "ok"
        assert list(est.classes_) == ["fraud", "ok"]

    def test_unfitted(self, data):
        with pytest.raises(Exception):
            GradientBoostedTreeClassifier().predict(data.features)

    def test_multiclass_rejected(self):
        with pytest.raises(ValueError):
            GradientBoostedTreeClassifier().fit(np.zeros((3, 1)), [0, 1, 2])

    def test_cross_val(self, data):
        scores = cross_val_score(GradientBoostedTreeClassifier(n_estimators=20),
                                 data.features, data.labels, cv=3, scoring="roc_auc")
        assert scores.mean() > 0.8

    def test_init_model(self, data):
        base = train(data.features, data.labels, 3, 2)
        est = GradientBoostedTreeClassifier(n_estimators=2, max_depth=2,
                                            init_model=base).fit(data.features, data.labels)
        assert len(est.model_.trees) == 5


class TestTransferBoostClassifier:
    def test_oneround_matches_core(self, domains):
        source, target = domains
        est = TransferBoostClassifier(source_trees=3, source_depth=3, target_trees=4,
                                      target_depth=3)
        est.fit(target.features, target.labels, source.features, source.labels)
        core = one_round(source, target, 3, 4, 3, 3)
        assert model_store.models_equal(est.model_, core.model)
        assert len(est.revise_traces_) == 3

    @pytest.mark.parametrize("workflow", ["baseline1", "baseline2", "multiround"])
    def test_workflows(self, domains, workflow):
        source, target = domains
        est = TransferBoostClassifier(workflow=workflow, source_trees=2, target_trees=3,
                                      target_depth=2)
        est.fit(target.features, target.labels, source.features, source.labels)
        n_trees = 3 if workflow == "baseline1" else 5
        assert len(est.model_.trees) == n_trees
        assert est.predict(target.features).shape == (target.n_rows,)

    def test_needs_source(self, domains):
        _, target = domains
        with pytest.raises(ValueError, match="X_source"):
            TransferBoostClassifier().fit(target.features, target.labels)

    def test_bad_workflow(self, domains):
        _, target = domains
        with pytest.raises(ValueError):
            TransferBoostClassifier(workflow="x").fit(target.features, target.labels)

    def test_clone(self):
        est = TransferBoostClassifier(resplit="fractile", discount_factor=0.2)
        assert clone(est).get_params() == est.get_params()
