import numpy as np
import pytest

from topicseg.chopping import ChopCriterion, chop, project_boundaries
from topicseg.combine import LM_ONLY, PM_ONLY, ModeParams, decode_show, prepare_show, tune
from topicseg.corpus import serialize_feature_table, serialize_shows, validate_show
from topicseg.errors import ValidationError
from topicseg.hmm import HmmConfig, SegmentationHmm
from topicseg.synthesis import (
    FeatureProfile,
    SourceTopology,
    generate,
    make_generator_model,
    stories_from_shows,
)
from topicseg.tree import TreeTrainConfig, train

PROFILES = [
    FeatureProfile("PAU_DUR", "lognormal", (0.4, 0.4), (-0.7, 0.4)),
    FeatureProfile("F0_DIFF", "normal", (2.0, 0.7), (0.0, 0.7)),
]


def small_model(seed=0, with_begin_end=False):
    return make_generator_model(
        4, words_per_cluster=15, shared_words=8, shared_mass=0.3, seed=seed, with_begin_end=with_begin_end
    )


class TestGeneration:
    def test_fixed_seed_is_byte_identical(self):
        model = small_model()
        topo = [SourceTopology("SRC", n_shows=3, units_per_show=15)]
        a = generate(model, topo, PROFILES, seed=12)
        b = generate(model, topo, PROFILES, seed=12)
        assert serialize_shows(a.shows) == serialize_shows(b.shows)
        assert serialize_feature_table(a.vectors) == serialize_feature_table(b.vectors)

    def test_generated_shows_validate_and_label_consistently(self):
        model = small_model(seed=1)
        topo = [SourceTopology("SRC", n_shows=4, units_per_show=12, turn_profile_name="TURN_F")]
        profiles = PROFILES + [FeatureProfile("TURN_F", "bernoulli", (0.8,), (0.1,))]
        corpus = generate(model, topo, profiles, seed=3)
        for show in corpus.shows:
            validate_show(show)
        by_show = {}
        for v in corpus.vectors:
            by_show.setdefault(v.show_id, []).append(v)
        for show in corpus.shows:
            units = chop(show, ChopCriterion("PAUSE", pause_threshold=0.575))
            labels, unreachable = project_boundaries(show, units)
            assert unreachable == []
            vectors = sorted(by_show[show.show_id], key=lambda v: v.boundary_index)
            assert len(vectors) == len(labels)
            for v, is_topic in zip(vectors, labels):
                assert (v.label == "topic") == is_topic

    def test_chopping_recovers_generated_units_exactly(self):
        model = small_model(seed=2)
        topo = [SourceTopology("SRC", n_shows=2, units_per_show=10, tokens_per_unit=7)]
        corpus = generate(model, topo, PROFILES, seed=5)
        for show in corpus.shows:
            units = chop(show, ChopCriterion("PAUSE", pause_threshold=0.575))
            assert len(units) == 10
            assert all(u.n_tokens == 7 for u in units)

    def test_single_cluster_pool_zero_boundary_density(self):
        model = small_model(seed=3)
        topo = [
            SourceTopology(
                "SRC", n_shows=2, units_per_show=8, mean_story_units=1e9, cluster_pool=1
            )
        ]
        corpus = generate(model, topo, PROFILES, seed=6)
        for show in corpus.shows:
            assert show.ref_topic_boundaries == frozenset()

    def test_pause_feature_equals_actual_gap(self):
        model = small_model(seed=4)
        topo = [SourceTopology("SRC", n_shows=1, units_per_show=6)]
        corpus = generate(model, topo, PROFILES, seed=7)
        show = corpus.shows[0]
        units = chop(show, ChopCriterion("PAUSE", pause_threshold=0.575))
        for v in corpus.vectors:
            gap = units[v.boundary_index - 1].pause_after
            assert v.features["PAU_DUR"] == pytest.approx(gap)

    def test_profiles_must_include_pause(self):
        model = small_model(seed=5)
        topo = [SourceTopology("SRC", n_shows=1, units_per_show=4)]
        with pytest.raises(ValidationError, match="PAU_DUR"):
            generate(model, topo, [FeatureProfile("F0", "normal", (1, 1), (0, 1))], seed=0)

    def test_pause_ordering_enforced(self):
        bad = FeatureProfile("PAU_DUR", "lognormal", (-1.0, 0.3), (0.5, 0.3))
        model = small_model(seed=6)
        topo = [SourceTopology("SRC", n_shows=1, units_per_show=4)]
        with pytest.raises(ValidationError, match="longer"):
            generate(model, topo, [bad, PROFILES[1]], seed=0)


class TestProfileSampling:
    def test_empirical_means_converge(self):
        rng = np.random.default_rng(0)
        n = 100_000
        for profile in PROFILES:
            for is_topic in (True, False):
                samples = [profile.sample(is_topic, rng) for _ in range(n)]
                mean = float(np.mean(samples))
                expect = profile.mean(is_topic)
                scale = max(abs(expect), 1.0)
                assert abs(mean - expect) <= 0.01 * scale * 3  # 1% tolerance, 3-sigma slack


class TestStoriesFromShows:
    def test_one_story_per_segment(self):
        model = small_model(seed=7)
        topo = [SourceTopology("SRC", n_shows=1, units_per_show=12, mean_story_units=3.0)]
        corpus = generate(model, topo, PROFILES, seed=8)
        show = corpus.shows[0]
        stories = stories_from_shows([show])
        assert len(stories) == len(show.ref_topic_boundaries) + 1
        assert sum(s.total_words for s in stories) == show.n_tokens


class TestPipelineRecovery:
    def test_lm_and_pm_each_recover_most_boundaries(self):
        # disjoint vocabularies and well-separated pause classes: each
        # single-knowledge-source segmenter recovers > 90% of boundaries at a
        # tuned operating point
        model = make_generator_model(
            4, words_per_cluster=20, shared_words=4, shared_mass=0.1, seed=9, with_begin_end=False
        )
        profiles = [
            FeatureProfile("PAU_DUR", "lognormal", (0.8, 0.3), (-1.2, 0.3)),
            FeatureProfile("F0_DIFF", "normal", (3.0, 0.5), (0.0, 0.5)),
        ]
        topo = [SourceTopology("SRC", n_shows=10, units_per_show=25, tokens_per_unit=10)]
        corpus = generate(model, topo, profiles, seed=10)
        criterion = ChopCriterion("PAUSE", pause_threshold=0.575)
        hmm_config = HmmConfig(tsp=1.0, n_clusters=model.n_clusters)
        hmm = SegmentationHmm(hmm_config)
        feature_map = {v.key(): v for v in corpus.vectors}
        labeled = [v for v in corpus.vectors if v.label is not None]
        tree = train(labeled, TreeTrainConfig(min_leaf=5, cv_folds=3, downsample=True, seed=0))
        prepared = [
            prepare_show(show, criterion, model, hmm, feature_map, tree) for show in corpus.shows
        ]
        for mode in (LM_ONLY, PM_ONLY):
            config = tune(
                prepared, mode, {"tsp": [1e-6, 1e-3, 0.1, 0.5, 1.0]}, hmm_config
            )
            recovered = total = 0
            for p in prepared:
                hyp = decode_show(p, mode, config.params, SegmentationHmm(hmm_config))
                for is_ref, decided in zip(p.ref_labels, hyp.decisions):
                    if is_ref:
                        total += 1
                        recovered += int(decided)
            assert total > 0
            assert recovered / total > 0.9, f"{mode} recovered {recovered}/{total}"
