import json

import numpy as np
import pytest

from oracles import logistic_data, random_model, strip_stats
from tlboost import model_store
from tlboost.engine import train
from tlboost.model_store import ModelFormatError
from tlboost.tree import Ensemble, ModelError, Tree, TreeNode, internal, leaf


@pytest.fixture(scope="module")
def trained():
    data = logistic_data(500, d=6, seed=3)
    return train(data.features, data.labels, 50, 3)


class TestCanonical:
    def test_empty_ensemble_round_trips(self, tmp_path):
        m = Ensemble(feature_names=("a",))
        model_store.save(m, tmp_path / "m.json")
        back = model_store.load(tmp_path / "m.json")
        assert back == m and back.trees == ()

    def test_trained_model_exact_margins(self, trained, tmp_path):
        path = tmp_path / "m.json"
        model_store.save(trained, path)
        back = model_store.load(path)
        X = np.random.default_rng(0).standard_normal((1000, 6)) * 3
        assert np.array_equal(back.predict_margin(X), trained.predict_margin(X))
        assert back.trees == trained.trees

    def test_serialization_is_stable(self, trained):
        assert model_store.dumps(trained) == model_store.dumps(trained)
        assert model_store.dumps(trained) == model_store.dumps(
            model_store.loads(model_store.dumps(trained)))

    def test_no_temp_files_left(self, trained, tmp_path):
        model_store.save(trained, tmp_path / "m.json")
        assert [p.name for p in tmp_path.iterdir()] == ["m.json"]

    def test_missing_child_is_broken_topology(self, trained):
        doc = json.loads(model_store.dumps(trained))
        doc["trees"][0]["nodes"][0]["left"] = 999
        with pytest.raises(ModelFormatError, match="broken tree topology"):
            model_store.from_document(doc)

    def test_version_mismatch(self, trained):
        doc = json.loads(model_store.dumps(trained))
        doc["format_version"] = 2
        with pytest.raises(ModelFormatError, match="version"):
            model_store.from_document(doc)

    def test_malformed_json(self):
        with pytest.raises(ModelFormatError, match="malformed"):
            model_store.loads("{not json")

    def test_rejects_inconsistent_score(self, trained):
        doc = json.loads(model_store.dumps(trained))
        doc["trees"][0]["nodes"][0]["score"] += 1.0
        with pytest.raises(ModelFormatError):
            model_store.from_document(doc)

    def test_rejects_count_mismatch(self, trained):
        doc = json.loads(model_store.dumps(trained))
        doc["trees"][0]["nodes"][0]["count"] += 1
        with pytest.raises(ModelFormatError):
            model_store.from_document(doc)

    def test_stats_required_when_complete(self, trained):
        doc = json.loads(model_store.dumps(trained))
        doc["trees"][0]["nodes"][0]["G"] = None
        with pytest.raises(ModelFormatError):
            model_store.from_document(doc)

    def test_stats_incomplete_model_round_trips(self, trained):
        bare = strip_stats(trained)
        back = model_store.loads(model_store.dumps(bare))
        assert not back.stats_complete
        assert back == bare

    def test_feature_index_out_of_range(self, trained):
        doc = json.loads(model_store.dumps(trained))
        doc["feature_names"] = doc["feature_names"][:1]
        with pytest.raises(ModelFormatError):
            model_store.from_document(doc)

    def test_random_models(self):
        rng = np.random.default_rng(123)
        for _ in range(30):
            m = random_model(rng)
            assert model_store.loads(model_store.dumps(m)) == m


class TestTextDump:
    def test_single_leaf_tree_is_two_lines(self):
        m = Ensemble(trees=(Tree.from_nodes([leaf(0, 0.5)]),), feature_names=("a",))
        body = [ln for ln in model_store.dump_text(m).splitlines()
                if ln.startswith("tree[") or ln[0].isdigit()]
        assert body == ["tree[0]: l2_reg=1.0", "0:leaf=0.5,origin=source"]

    def test_table_line_parses(self):
        text = ("tree[0]:\n"
                "0:[f5<140689.5] left=1 right=2 gain=542.19208 count=62400\n"
                "1:leaf=-0.02\n"
                "2:leaf=0.01\n")
        m = model_store.parse_text(text)
        root = m.trees[0].root
        assert (root.feature, root.threshold, root.left, root.right) == (5, 140689.5, 1, 2)
        assert root.gain == 542.19208 and root.count == 62400
        assert m.n_features == 6 and not m.stats_complete

    def test_third_party_keys(self):
        text = "tree[0]:\n0:[f0<1.5] yes=1 no=2 missing=1 gain=3.0 cover=4.0\n1:leaf=0.1\n2:leaf=-0.1\n"
        root = model_store.parse_text(text).trees[0].root
        assert (root.left, root.right, root.H) == (1, 2, 4.0)

    def test_round_trip(self, trained):
        text = model_store.dump_text(trained)
        back = model_store.parse_text(text)
        assert back == trained and back.provenance == trained.provenance
        assert model_store.dump_text(back) == text

    def test_random_eight_tree_model(self):
        data = logistic_data(300, d=4, seed=9)
        m = train(data.features, data.labels, 8, 3)
        assert model_store.parse_text(model_store.dump_text(m)) == m

    def test_duplicate_node_id(self):
        text = "tree[0]:\n0:[f0<1] left=1 right=2\n1:leaf=0.1\n1:leaf=0.2\n"
        with pytest.raises(ModelFormatError, match="line 4: duplicate node_id 1"):
            model_store.parse_text(text)

    def test_syntax_error_has_line_number(self):
        text = "tree[0]:\n0:leaf=0.1\nnonsense here\n"
        with pytest.raises(ModelFormatError, match="line 3"):
            model_store.parse_text(text)

    def test_unknown_field(self):
        with pytest.raises(ModelFormatError, match="line 2: unknown field"):
            model_store.parse_text("tree[0]:\n0:leaf=0.1,colour=red\n")

    def test_broken_topology(self):
        with pytest.raises(ModelFormatError, match="broken tree topology"):
            model_store.parse_text("tree[0]:\n0:[f0<1] left=1 right=2\n1:leaf=0.1\n")

    def test_out_of_order_tree_header(self):
        with pytest.raises(ModelFormatError, match="expected tree\\[0\\]"):
            model_store.parse_text("tree[1]:\n0:leaf=0.1\n")


class TestTreeInvariants:
    def test_cycle_rejected(self):
        with pytest.raises(ModelError, match="broken tree topology"):
            Tree.from_nodes([internal(0, 0, 1.0, 1, 2), internal(1, 0, 1.0, 0, 2),
                             leaf(2, 0.0)])

    def test_shared_child_rejected(self):
        with pytest.raises(ModelError, match="broken tree topology"):
            Tree.from_nodes([internal(0, 0, 1.0, 1, 1), leaf(1, 0.0)])

    def test_orphan_rejected(self):
        with pytest.raises(ModelError, match="broken tree topology"):
            Tree.from_nodes([leaf(0, 0.0), leaf(5, 0.0)])

    def test_unknown_origin(self):
        with pytest.raises(ModelError):
            Tree.from_nodes([TreeNode(0, weight=0.0, origin="alien")])
