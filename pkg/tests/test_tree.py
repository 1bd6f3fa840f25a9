import math

import numpy as np
import pytest

from topicseg.corpus import BoundaryFeatureVector
from topicseg.errors import ValidationError
from topicseg.tree import (
    DecisionTree,
    TreeNode,
    TreeTrainConfig,
    downsample,
    entropy_reduction,
    feature_usage,
    load_tree,
    predict,
    save_tree,
    select_features,
    train,
)

from oracles import best_threshold_interval


def vec(i, label=None, **features):
    return BoundaryFeatureVector("show", i, features, label)


def labeled_1d(xs, ys, name="x"):
    return [
        vec(i, label="topic" if y else "nontopic", **{name: float(x)})
        for i, (x, y) in enumerate(zip(xs, ys))
    ]


def config(**kwargs):
    defaults = dict(min_leaf=2, cv_folds=3, downsample=False, seed=0)
    defaults.update(kwargs)
    return TreeTrainConfig(**defaults)


class TestDownsample:
    def test_majority_subsampled_to_minority(self):
        data = [vec(i, label="nontopic", x=0.0) for i in range(100)]
        data += [vec(100 + i, label="topic", x=1.0) for i in range(10)]
        balanced = downsample(data, seed=1)
        labels = [v.label for v in balanced]
        assert labels.count("topic") == 10
        assert labels.count("nontopic") == 10

    def test_already_balanced_is_identity(self):
        data = [vec(0, label="topic", x=1.0), vec(1, label="nontopic", x=0.0)]
        assert sorted(v.key() for v in downsample(data, seed=9)) == [("show", 0), ("show", 1)]

    def test_seeded_determinism(self):
        data = [vec(i, label="nontopic", x=float(i)) for i in range(50)]
        data += [vec(50 + i, label="topic", x=float(i)) for i in range(5)]
        assert downsample(data, seed=3) == downsample(data, seed=3)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            downsample([vec(0, label="topic", x=1.0)], seed=0)


class TestTraining:
    def test_1d_separable_threshold_matches_exhaustive_search(self):
        rng = np.random.default_rng(0)
        xs = np.round(rng.uniform(0, 10, 20), 3)
        ys = xs > 5.0
        if ys.all() or not ys.any():
            xs[0], ys[0] = 1.0, False
        tree = train(labeled_1d(xs, ys), config())
        lo, hi = best_threshold_interval(xs, ys)
        assert not tree.root.is_leaf
        assert lo < tree.root.threshold < hi
        assert {tree.root.left.posterior, tree.root.right.posterior} == {0.0, 1.0}

    def test_identical_labels_give_single_leaf(self):
        data = [vec(i, label="topic", x=float(i)) for i in range(10)]
        tree = train(data, config())
        assert tree.root.is_leaf
        assert tree.root.posterior == 1.0

    def test_noise_labels_prune_to_root(self):
        rng = np.random.default_rng(5)
        xs = rng.uniform(0, 1, 200)
        ys = rng.random(200) < 0.5
        if ys.all() or not ys.any():
            ys[0] = not ys[0]
        tree = train(labeled_1d(xs, ys), config(cv_folds=5))
        assert tree.root.is_leaf
        # cv never selects a penalty whose score is strictly worse than another
        best = min(tree.cv_errors)
        chosen_idx = tree.cv_alphas.index(tree.chosen_alpha)
        assert tree.cv_errors[chosen_idx] == best

    def test_order_invariance(self):
        rng = np.random.default_rng(7)
        xs = rng.uniform(0, 10, 40)
        ys = xs > 4.0
        data = labeled_1d(xs, ys)
        shuffled = [data[i] for i in rng.permutation(len(data))]
        a = train(data, config())
        b = train(shuffled, config())
        assert a.root.threshold == b.root.threshold
        assert a.n_leaves() == b.n_leaves()

    def test_balanced_leaf_ratio_equals_count_ratio(self):
        rng = np.random.default_rng(9)
        data = []
        for i in range(60):
            is_topic = i % 2 == 0
            data.append(
                vec(
                    i,
                    label="topic" if is_topic else "nontopic",
                    x=float(rng.normal(1.0 if is_topic else 0.0, 0.8)),
                )
            )
        tree = train(data, config(downsample=True))

        def walk(node):
            if node.is_leaf:
                if node.n_no > 0 and node.n_yes > 0:
                    ratio = node.posterior / (1 - node.posterior)
                    assert ratio == pytest.approx(node.n_yes / node.n_no)
                assert 0.0 <= node.posterior <= 1.0
            else:
                assert node.n_yes == node.left.n_yes + node.right.n_yes
                assert node.n_no == node.left.n_no + node.right.n_no
                walk(node.left)
                walk(node.right)

        walk(tree.root)

    def test_min_examples(self):
        with pytest.raises(ValidationError):
            train([vec(0, label="topic", x=1.0)], config())

    def test_max_depth_limits_growth(self):
        rng = np.random.default_rng(11)
        xs = rng.uniform(0, 1, 100)
        ys = (xs * 7).astype(int) % 2 == 0
        shallow = train(labeled_1d(xs, ys), config(max_depth=1, cv_folds=2))
        assert shallow.depth() <= 1


class TestPredict:
    def hand_tree(self):
        root = TreeNode(n_yes=6, n_no=6, feature="PAU_DUR", kind="numeric", threshold=1.0, missing_left=False)
        root.left = TreeNode(n_yes=1, n_no=4)
        root.right = TreeNode(
            n_yes=5, n_no=2, feature="TURN_F", kind="categorical", subset=frozenset({"true"}), missing_left=True
        )
        root.right.left = TreeNode(n_yes=4, n_no=0)
        root.right.right = TreeNode(n_yes=1, n_no=2)
        return DecisionTree(
            root=root,
            schema={"PAU_DUR": "numeric", "TURN_F": "categorical"},
            prior_yes=6,
            prior_no=6,
            balanced=True,
        )

    def test_single_leaf_constant(self):
        tree = DecisionTree(TreeNode(n_yes=3, n_no=7), {}, 3, 7, balanced=False)
        assert predict(tree, vec(0, x=123.0)) == 0.3
        assert predict(tree, vec(1)) == 0.3

    def test_missing_follows_missing_branch(self):
        tree = self.hand_tree()
        # missing pause goes right (missing_left=False), missing turn goes left
        assert predict(tree, vec(0)) == 1.0

    def test_known_path(self):
        tree = self.hand_tree()
        assert predict(tree, vec(0, PAU_DUR=0.4)) == pytest.approx(0.2)
        assert predict(tree, vec(1, PAU_DUR=2.0, TURN_F="true")) == 1.0
        assert predict(tree, vec(2, PAU_DUR=2.0, TURN_F="false")) == pytest.approx(1 / 3)

    def test_schema_mismatch_raises(self):
        from topicseg.corpus import FeatureSchema

        tree = self.hand_tree()
        with pytest.raises(ValidationError, match="absent from schema"):
            predict(tree, vec(0, PAU_DUR=1.0), schema=FeatureSchema({"PAU_DUR": "numeric"}, open=False))


class TestEntropyReduction:
    def test_perfect_tree_recovers_prior_entropy(self):
        xs = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0]
        ys = [False, False, False, True, True, True]
        data = labeled_1d(xs, ys)
        tree = train(data, config(min_leaf=1, cv_folds=2))
        assert entropy_reduction(tree, data) == pytest.approx(1.0)  # H(0.5) = 1 bit

    def test_root_prior_tree_scores_exactly_zero(self):
        heldout = labeled_1d([0.0, 1.0, 2.0, 3.0], [True, True, False, True])
        tree = DecisionTree(TreeNode(n_yes=3, n_no=1), {"x": "numeric"}, 3, 1, balanced=False)
        assert abs(entropy_reduction(tree, heldout)) <= 1e-12

    def test_uninformative_half_tree_on_balanced_heldout(self):
        heldout = labeled_1d([0.0, 1.0], [True, False])
        tree = DecisionTree(TreeNode(n_yes=1, n_no=1), {"x": "numeric"}, 1, 1, balanced=True)
        assert entropy_reduction(tree, heldout) == pytest.approx(0.0, abs=1e-12)

    def test_bad_tree_goes_negative(self):
        heldout = labeled_1d([0.0, 1.0], [True, True])
        tree = DecisionTree(TreeNode(n_yes=1, n_no=9), {"x": "numeric"}, 1, 9, balanced=False)
        assert entropy_reduction(tree, heldout) < 0


def informative_noise_data(rng, n=160, noise_features=1):
    data = []
    for i in range(n):
        is_topic = bool(rng.integers(2))
        features = {"signal": float(rng.normal(2.0 if is_topic else 0.0, 0.5))}
        for k in range(noise_features):
            features[f"noise{k}"] = float(rng.uniform(0, 1))
        data.append(vec(i, label="topic" if is_topic else "nontopic", **features))
    return data


class TestFeatureSelection:
    def test_noise_feature_eliminated(self):
        rng = np.random.default_rng(2)
        data = informative_noise_data(rng, 200)
        heldout = informative_noise_data(rng, 200)
        result = select_features(data, heldout, config=config(cv_folds=3))
        assert result.selected == ("signal",)
        assert any(step.phase == 1 for step in result.trace)
        assert any(step.phase == 2 for step in result.trace)

    def test_single_feature_returned(self):
        data = labeled_1d([0.0, 1.0, 2.0, 10.0, 11.0, 12.0], [False] * 3 + [True] * 3)
        result = select_features(data, data, config=config(min_leaf=1, cv_folds=2))
        assert result.selected == ("x",)

    def test_duplicated_feature_survives_once(self):
        rng = np.random.default_rng(4)
        xs = rng.uniform(0, 10, 120)
        ys = xs > 5.0
        data = [
            vec(i, label="topic" if y else "nontopic", dup_a=float(x), dup_b=float(x))
            for i, (x, y) in enumerate(zip(xs, ys))
        ]
        heldout = data[::2]
        result = select_features(data, heldout, config=config(cv_folds=3))
        assert result.selected in (("dup_a",), ("dup_b",))


class TestFeatureUsage:
    def test_single_split_tree_has_usage_one(self):
        xs = [0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0]
        ys = [False] * 4 + [True] * 4
        tree = train(labeled_1d(xs, ys), config(min_leaf=1, cv_folds=4))
        usage = feature_usage(tree, labeled_1d(xs, ys))
        assert usage == {"x": 1.0}

    def test_root_only_tree_has_empty_usage(self):
        tree = DecisionTree(TreeNode(n_yes=1, n_no=1), {"x": "numeric"}, 1, 1, balanced=False)
        assert feature_usage(tree, labeled_1d([0.0], [True])) == {}

    def test_root_feature_dominates_depth_two_tree(self):
        root = TreeNode(n_yes=4, n_no=4, feature="a", kind="numeric", threshold=0.5)
        root.left = TreeNode(n_yes=0, n_no=4)
        root.right = TreeNode(n_yes=4, n_no=0, feature="b", kind="numeric", threshold=0.5)
        root.right.left = TreeNode(n_yes=2, n_no=0)
        root.right.right = TreeNode(n_yes=2, n_no=0)
        tree = DecisionTree(root, {"a": "numeric", "b": "numeric"}, 4, 4, balanced=True)
        heldout = [
            vec(i, label="topic", a=float(a), b=0.1) for i, a in enumerate([0.0, 0.2, 0.8, 1.0])
        ]
        usage = feature_usage(tree, heldout)
        assert usage["a"] >= usage["b"]
        assert sum(usage.values()) == pytest.approx(1.0)

    def test_grouping(self):
        root = TreeNode(n_yes=2, n_no=2, feature="F0K_A", kind="numeric", threshold=0.5)
        root.left = TreeNode(n_yes=0, n_no=2)
        root.right = TreeNode(n_yes=2, n_no=0)
        tree = DecisionTree(root, {"F0K_A": "numeric"}, 2, 2, balanced=True)
        usage = feature_usage(tree, [vec(0, label="topic", F0K_A=1.0)], groups={"F0K_A": "f0"})
        assert usage == {"f0": 1.0}


class TestSerialization:
    def test_round_trip_preserves_predictions(self, tmp_path):
        rng = np.random.default_rng(6)
        data = informative_noise_data(rng, 120, noise_features=2)
        tree = train(data, config(cv_folds=3))
        path = str(tmp_path / "tree.json")
        save_tree(tree, path)
        again = load_tree(path)
        assert again.balanced == tree.balanced
        for v in data[:25]:
            assert predict(again, v) == predict(tree, v)
        save_tree(again, str(tmp_path / "tree2.json"))
        assert (tmp_path / "tree.json").read_bytes() == (tmp_path / "tree2.json").read_bytes()


class TestCategoricalSplits:
    def test_three_way_gender_subset(self):
        data = []
        rng = np.random.default_rng(12)
        for i in range(90):
            g = ("M", "F", "unknown")[i % 3]
            is_topic = g in ("M", "F") if i % 9 else g == "unknown"  # mostly M,F -> topic
            data.append(vec(i, label="topic" if is_topic else "nontopic", GEN=g))
        tree = train(data, config(cv_folds=3, min_leaf=5))
        if not tree.root.is_leaf:
            assert tree.root.kind == "categorical"
            assert tree.root.subset < {"M", "F", "unknown"}

    def test_unseen_category_routes_right_of_subset(self):
        root = TreeNode(n_yes=1, n_no=1, feature="GEN", kind="categorical", subset=frozenset({"M"}))
        root.left = TreeNode(n_yes=1, n_no=0)
        root.right = TreeNode(n_yes=0, n_no=1)
        tree = DecisionTree(root, {"GEN": "categorical"}, 1, 1, balanced=True)
        assert predict(tree, vec(0, GEN="X")) == 0.0
