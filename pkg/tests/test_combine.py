import numpy as np
import pytest

from topicseg.chopping import ChopCriterion
from topicseg.combine import (
    CM_DT,
    CM_HMM,
    LM_ONLY,
    PM_ONLY,
    ModeParams,
    cm_dt_decide,
    cm_dt_features,
    decode_show,
    posterior_to_loglike,
    prepare_show,
    score_hypotheses,
    tune,
)
from topicseg.corpus import BoundaryFeatureVector
from topicseg.errors import ValidationError
from topicseg.evaluation import EvalConfig
from topicseg.hmm import HmmConfig, SegmentationHmm, viterbi_path_weight, viterbi_segment
from topicseg.synthesis import FeatureProfile, SourceTopology, generate, make_generator_model
from topicseg.tree import TreeTrainConfig, train

from oracles import enumerate_paths

CRITERION = ChopCriterion("PAUSE", pause_threshold=0.575)

PROFILES = [
    FeatureProfile("PAU_DUR", "lognormal", (0.3, 0.5), (-0.6, 0.5)),
    FeatureProfile("F0_DIFF", "normal", (1.6, 1.0), (0.0, 1.0)),
]


def tiny_corpus(seed=0, sources=(("SRC", 3.0, 0),), n_shows=6):
    model = make_generator_model(
        4, words_per_cluster=12, shared_words=8, shared_mass=0.4, seed=seed, with_begin_end=False
    )
    topology = [
        SourceTopology(
            name,
            n_shows=n_shows,
            units_per_show=20,
            tokens_per_unit=8,
            mean_story_units=density,
            cluster_pool=pool,
        )
        for name, density, pool in sources
    ]
    return model, generate(model, topology, PROFILES, seed=seed)


def prepare_corpus(model, corpus, tree=None, use_begin_end=False):
    hmm = SegmentationHmm(HmmConfig(tsp=1.0, n_clusters=model.n_clusters, use_begin_end=use_begin_end))
    feature_map = {v.key(): v for v in corpus.vectors}
    return [
        prepare_show(show, CRITERION, model, hmm, feature_map, tree) for show in corpus.shows
    ]


def balanced_tree_for(corpus, seed=0):
    labeled = [v for v in corpus.vectors if v.label is not None]
    return train(labeled, TreeTrainConfig(min_leaf=5, cv_folds=3, downsample=True, seed=seed))


class TestAugmentation:
    def test_posterior_becomes_feature(self):
        base = BoundaryFeatureVector("s", 1, {"PAU_DUR": 0.7}, "topic")
        out = cm_dt_features(base, 0.9)
        assert out.features["POST_TOPIC"] == 0.9
        assert out.features["PAU_DUR"] == 0.7
        assert out.label == "topic"

    def test_zero_posterior_is_present_not_missing(self):
        out = cm_dt_features(BoundaryFeatureVector("s", 1, {}, None), 0.0)
        assert out.features["POST_TOPIC"] == 0.0

    def test_double_augmentation_rejected(self):
        once = cm_dt_features(BoundaryFeatureVector("s", 1, {}, None), 0.5)
        with pytest.raises(ValidationError, match="already present"):
            cm_dt_features(once, 0.5)

    def test_out_of_range_posterior_rejected(self):
        with pytest.raises(ValidationError):
            cm_dt_features(BoundaryFeatureVector("s", 1, {}, None), 1.5)


class TestThresholdDecisions:
    def tree_and_vectors(self):
        rng = np.random.default_rng(0)
        data = [
            BoundaryFeatureVector(
                "s", i, {"x": float(rng.normal(2.0 if i % 2 else 0.0, 0.6))},
                "topic" if i % 2 else "nontopic",
            )
            for i in range(80)
        ]
        tree = train(data, TreeTrainConfig(min_leaf=5, cv_folds=3, downsample=False, seed=0))
        return tree, data[:20]

    def test_threshold_zero_fires_on_any_positive_posterior(self):
        tree, vectors = self.tree_and_vectors()
        hyp = cm_dt_decide(tree, vectors, 0.0)
        for d, p in zip(hyp.decisions, hyp.posteriors):
            assert d == (p > 0)

    def test_threshold_one_never_fires(self):
        tree, vectors = self.tree_and_vectors()
        assert cm_dt_decide(tree, vectors, 1.0).yes_count() == 0

    def test_fixed_posteriors_against_midpoint(self):
        from topicseg.tree import DecisionTree, TreeNode

        leaf = TreeNode(n_yes=0, n_no=0)
        tree = DecisionTree(leaf, {}, 0, 0, balanced=True)
        v = BoundaryFeatureVector("s", 1, {}, None)
        low = TreeNode(n_yes=1, n_no=4)
        high = TreeNode(n_yes=7, n_no=3)
        t1 = DecisionTree(low, {}, 1, 4, balanced=True)
        t2 = DecisionTree(high, {}, 7, 3, balanced=True)
        assert cm_dt_decide(t1, [v], 0.5).decisions == (False,)
        assert cm_dt_decide(t2, [v], 0.5).decisions == (True,)

    def test_sweep_is_monotone(self):
        tree, vectors = self.tree_and_vectors()
        counts = [cm_dt_decide(tree, vectors, t).yes_count() for t in np.linspace(0, 1, 21)]
        assert counts == sorted(counts, reverse=True)


class TestPosteriorConversion:
    def test_half_gives_equal_likelihoods(self):
        yes, no = posterior_to_loglike(0.5, True)
        assert yes == no

    def test_extremes_are_clamped(self):
        yes, no = posterior_to_loglike(1.0, True)
        assert np.isfinite(yes) and np.isfinite(no)
        assert yes > no
        yes0, no0 = posterior_to_loglike(0.0, True)
        assert no0 > yes0

    def test_unbalanced_training_rejected(self):
        with pytest.raises(ValidationError, match="downsample"):
            posterior_to_loglike(0.7, False)

    def test_injection_reproduces_joint_argmax(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            c, n = 2, 3
            unit = rng.uniform(-4, 0, size=(n, c))
            p = rng.uniform(0.05, 0.95, size=n - 1)
            boundary = np.array([posterior_to_loglike(pi, True) for pi in p])
            tsp = 0.6
            hmm = SegmentationHmm(HmmConfig(tsp=tsp, n_clusters=c, mcw=1.0))
            best, _, _, _ = enumerate_paths(n, c, False, unit, np.log(tsp), 1.0, boundary)
            assert viterbi_path_weight(hmm, unit, boundary) == pytest.approx(best, abs=1e-9)
            hyp = viterbi_segment(hmm, unit, boundary)
            assert _path_weight(unit, boundary, np.log(tsp), hyp) == pytest.approx(best, abs=1e-9)


def _path_weight(unit, boundary, log_tsp, hyp):
    states = [int(label[1:]) for label in hyp.unit_states]
    w = unit[0][states[0]]
    for i, decision in enumerate(hyp.decisions):
        if decision:
            w += log_tsp + boundary[i][0]
        else:
            w += boundary[i][1]
        w += unit[i + 1][states[i + 1]]
    return w


class TestDecodeModes:
    def test_uniform_prosody_matches_lm_only(self):
        model, corpus = tiny_corpus(seed=3)
        prepared = prepare_corpus(model, corpus)
        params = ModeParams(tsp=0.1)
        hmm = SegmentationHmm(HmmConfig(tsp=0.1, n_clusters=model.n_clusters))
        for p in prepared:
            p.tree_posteriors = np.full(p.n_boundaries, 0.5)
            lm = decode_show(p, LM_ONLY, params, hmm)
            cm = decode_show(p, CM_HMM, params, hmm)
            assert lm.decisions == cm.decisions

    def test_mcw_zero_matches_lm_only(self):
        model, corpus = tiny_corpus(seed=4)
        tree = balanced_tree_for(corpus)
        prepared = prepare_corpus(model, corpus, tree)
        params = ModeParams(tsp=0.1, mcw=0.0)
        hmm = SegmentationHmm(HmmConfig(tsp=0.1, n_clusters=model.n_clusters, mcw=0.0))
        for p in prepared:
            lm = decode_show(p, LM_ONLY, params, hmm)
            cm = decode_show(p, CM_HMM, params, hmm)
            assert lm.decisions == cm.decisions

    def test_cm_dt_needs_tree(self):
        model, corpus = tiny_corpus(seed=5)
        prepared = prepare_corpus(model, corpus)
        with pytest.raises(ValidationError):
            decode_show(prepared[0], CM_DT, ModeParams(), SegmentationHmm(HmmConfig(tsp=1.0, n_clusters=4)))

    def test_pm_only_uses_no_words(self):
        model, corpus = tiny_corpus(seed=6)
        tree = balanced_tree_for(corpus)
        prepared = prepare_corpus(model, corpus, tree)
        p = prepared[0]
        hmm = SegmentationHmm(HmmConfig(tsp=0.5, n_clusters=model.n_clusters))
        base = decode_show(p, PM_ONLY, ModeParams(tsp=0.5), hmm)
        p.unit_loglikes = p.unit_loglikes + 100.0  # words must not matter
        again = decode_show(p, PM_ONLY, ModeParams(tsp=0.5), hmm)
        assert base.decisions == again.decisions


class TestTune:
    def test_single_point_grid_returns_that_point(self):
        model, corpus = tiny_corpus(seed=7)
        prepared = prepare_corpus(model, corpus)
        config = tune(
            prepared, LM_ONLY, {"tsp": [0.01]}, HmmConfig(tsp=1.0, n_clusters=model.n_clusters)
        )
        assert config.params.tsp == 0.01
        assert config.mode == LM_ONLY

    def test_selected_point_minimizes_cost_over_grid(self):
        model, corpus = tiny_corpus(seed=8)
        prepared = prepare_corpus(model, corpus)
        grid = {"tsp": [1e-8, 1e-4, 1e-2, 0.1, 1.0]}
        hmm_config = HmmConfig(tsp=1.0, n_clusters=model.n_clusters)
        config = tune(prepared, LM_ONLY, grid, hmm_config)

        # independent sweep: decode and score each grid point directly
        eval_config = EvalConfig()
        costs = {}
        for tsp in grid["tsp"]:
            hmm = SegmentationHmm(hmm_config)
            hyps = [decode_show(p, LM_ONLY, ModeParams(tsp=tsp), hmm, with_posterior=False) for p in prepared]
            costs[tsp] = score_hypotheses(prepared, hyps, eval_config)
        assert config.params.tsp == min(costs, key=lambda t: (costs[t], grid["tsp"].index(t)))
        assert min(costs.values()) == pytest.approx(
            min(cost for s, _, cost in config.tuning_table if s == "*")
        )

    def test_per_source_densities_pull_tsp_apart(self):
        model, corpus = tiny_corpus(
            seed=9, sources=(("DENSE", 2.0, 0), ("SPARSE", 9.0, 0)), n_shows=8
        )
        prepared = prepare_corpus(model, corpus)
        grid = {"tsp": [1e-10, 1e-6, 1e-3, 0.1, 1.0]}
        config = tune(prepared, LM_ONLY, grid, HmmConfig(tsp=1.0, n_clusters=model.n_clusters))
        dense = config.for_source("DENSE").tsp
        sparse = config.for_source("SPARSE").tsp
        assert dense >= sparse  # denser topics need the weaker switch penalty

    def test_empty_dev_rejected(self):
        with pytest.raises(ValidationError):
            tune([], LM_ONLY, {"tsp": [0.1]}, HmmConfig(tsp=1.0, n_clusters=2))

    def test_dev_without_references_rejected(self):
        model, corpus = tiny_corpus(seed=10)
        prepared = prepare_corpus(model, corpus)
        for p in prepared:
            p.show = p.show.__class__(
                show_id=p.show.show_id,
                source_type=p.show.source_type,
                tokens=p.show.tokens,
                ref_topic_boundaries=frozenset(),
                duration=p.show.duration,
            )
            p.ref_labels = [False] * len(p.ref_labels)
        with pytest.raises(ValidationError, match="reference"):
            tune(prepared, LM_ONLY, {"tsp": [0.1]}, HmmConfig(tsp=1.0, n_clusters=model.n_clusters))

    def test_config_round_trip(self, tmp_path):
        from topicseg.combine import load_config, save_config

        model, corpus = tiny_corpus(seed=11)
        prepared = prepare_corpus(model, corpus)
        config = tune(
            prepared, LM_ONLY, {"tsp": [0.01, 0.1]}, HmmConfig(tsp=1.0, n_clusters=model.n_clusters)
        )
        path = str(tmp_path / "config.json")
        save_config(config, path)
        again = load_config(path)
        assert again.mode == config.mode
        assert again.params == config.params
        assert again.per_source == config.per_source
