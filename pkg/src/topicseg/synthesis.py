"""Synthetic multi-topic shows with known ground truth.

Shows sample a story sequence from a generator topic model; each story
emits fixed-size units from its cluster unigram (optionally with distinct
segment-initial/-final vocabulary), and every inter-unit boundary draws its
features from class-conditional profiles. Inter-unit pauses sit above a
configurable floor so pause chopping at the standard threshold reconstructs
exactly the generated units and the feature table joins losslessly.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import BoundaryFeatureVector, Show, Story, Token
from .errors import ValidationError
from .topic_lm import TopicClusterModel

TOKEN_DURATION = 0.25  # seconds per emitted word
STOP_WORDS = ("the", "a", "of", "to", "and", "in", "is", "that", "it", "on")


@dataclass(frozen=True)
class FeatureProfile:
    """Class-conditional sampler for one boundary feature.

    kind 'lognormal' and 'normal' take (mu, sigma) of the underlying
    distribution; 'bernoulli' takes (p_true,) and yields 'true'/'false'
    categorical labels.
    """

    name: str
    kind: str
    topic_params: tuple
    nontopic_params: tuple

    def __post_init__(self):
        if self.kind not in ("lognormal", "normal", "bernoulli"):
            raise ValidationError(f"unknown profile kind {self.kind!r}")

    def sample(self, is_topic: bool, rng: np.random.Generator):
        params = self.topic_params if is_topic else self.nontopic_params
        if self.kind == "lognormal":
            return float(rng.lognormal(params[0], params[1]))
        if self.kind == "normal":
            return float(rng.normal(params[0], params[1]))
        return "true" if rng.random() < params[0] else "false"

    def mean(self, is_topic: bool) -> float:
        params = self.topic_params if is_topic else self.nontopic_params
        if self.kind == "lognormal":
            return math.exp(params[0] + params[1] ** 2 / 2)
        if self.kind == "normal":
            return params[0]
        return params[0]


@dataclass(frozen=True)
class SourceTopology:
    source_type: str
    n_shows: int
    units_per_show: int
    tokens_per_unit: int = 12
    mean_story_units: float = 4.0  # geometric story lengths, >= 1
    cluster_pool: int = 0  # 0 = draw stories from all clusters
    distinct_adjacent: bool = True  # consecutive stories use different clusters
    stop_word_rate: float = 0.3
    pause_floor: float = 0.65  # added to every sampled pause
    turn_profile_name: str | None = None  # bernoulli profile controlling speaker change
    false_cue_rate: float = 0.0  # nontopic boundaries that look fully topic-like
    digression_rate: float = 0.0  # units emitted from a random other cluster

    def __post_init__(self):
        if self.n_shows < 1 or self.units_per_show < 1 or self.tokens_per_unit < 1:
            raise ValidationError("show topology counts must be >= 1")
        if self.mean_story_units < 1:
            raise ValidationError("mean_story_units must be >= 1")
        if not 0 <= self.stop_word_rate < 1:
            raise ValidationError("stop_word_rate must lie in [0, 1)")
        if not 0 <= self.false_cue_rate < 1:
            raise ValidationError("false_cue_rate must lie in [0, 1)")
        if not 0 <= self.digression_rate < 1:
            raise ValidationError("digression_rate must lie in [0, 1)")


@dataclass
class SynthCorpus:
    shows: list[Show] = field(default_factory=list)
    vectors: list[BoundaryFeatureVector] = field(default_factory=list)


def _check_profiles(profiles: list[FeatureProfile]) -> dict:
    by_name = {p.name: p for p in profiles}
    if "PAU_DUR" not in by_name:
        raise ValidationError("profiles must define PAU_DUR")
    if not any(p.kind == "normal" for p in profiles):
        raise ValidationError("profiles must define at least one F0-like (normal) feature")
    pause = by_name["PAU_DUR"]
    if pause.kind != "lognormal":
        raise ValidationError("PAU_DUR profile must be lognormal")
    if pause.mean(True) <= pause.mean(False):
        raise ValidationError("topic pauses must be longer than nontopic pauses on average")
    for p in profiles:
        if p.kind in ("lognormal", "normal") and (p.topic_params[1] <= 0 or p.nontopic_params[1] <= 0):
            raise ValidationError(f"profile {p.name}: zero-variance classes are degenerate")
    return by_name


def _story_plan(topo: SourceTopology, n_clusters: int, rng) -> list[tuple[int, int]]:
    """(cluster, n_units) per story covering units_per_show units."""
    pool = np.arange(n_clusters)
    if topo.cluster_pool and topo.cluster_pool < n_clusters:
        pool = rng.choice(n_clusters, size=topo.cluster_pool, replace=False)
    plan = []
    remaining = topo.units_per_show
    p_stop = 1.0 / topo.mean_story_units
    previous = None
    while remaining > 0:
        cluster = int(pool[rng.integers(len(pool))])
        if topo.distinct_adjacent and len(pool) > 1:
            while cluster == previous:
                cluster = int(pool[rng.integers(len(pool))])
        previous = cluster
        length = min(int(rng.geometric(p_stop)), remaining)
        plan.append((cluster, length))
        remaining -= length
    return plan


def generate(
    model: TopicClusterModel,
    topology: list[SourceTopology],
    feature_profiles: list[FeatureProfile],
    seed: int,
) -> SynthCorpus:
    """Emit shows plus a labeled boundary feature table; fixed seed is
    byte-reproducible. Per-show RNGs are derived so shows are independent."""
    if model.n_clusters < 2:
        raise ValidationError("generator model needs at least 2 clusters")
    by_name = _check_profiles(feature_profiles)
    pause_profile = by_name["PAU_DUR"]

    corpus = SynthCorpus()
    vocab = list(model.vocab)
    seq = np.random.SeedSequence(seed)
    show_seeds = seq.spawn(sum(t.n_shows for t in topology))
    show_counter = 0
    for topo in topology:
        turn_profile = by_name.get(topo.turn_profile_name) if topo.turn_profile_name else None
        for s in range(topo.n_shows):
            rng = np.random.default_rng(show_seeds[show_counter])
            show_id = f"{topo.source_type}_{s:03d}"
            show, vectors = _generate_show(
                model, topo, feature_profiles, pause_profile, turn_profile, vocab, rng, show_id
            )
            corpus.shows.append(show)
            corpus.vectors.extend(vectors)
            show_counter += 1
    return corpus


def _generate_show(model, topo, profiles, pause_profile, turn_profile, vocab, rng, show_id):
    plan = _story_plan(topo, model.n_clusters, rng)
    boundary_is_topic = []
    unit_words = []
    for cluster, length in plan:
        for u in range(length):
            role = "begin" if u == 0 else ("end" if u == length - 1 else "middle")
            unit_words.append(_unit_words(model, cluster, role, topo, vocab, rng))
        boundary_is_topic.extend([False] * (length - 1) + [True])
    boundary_is_topic = boundary_is_topic[:-1]  # no boundary after the last unit

    # a false cue is a topic-internal boundary whose prosody (pause, pitch,
    # speaker change) looks exactly like a topic change
    cue_classes = [
        is_topic or rng.random() < topo.false_cue_rate for is_topic in boundary_is_topic
    ]

    speakers = ["spk0"]
    for cue_class in cue_classes:
        change = False
        if turn_profile is not None:
            change = turn_profile.sample(cue_class, rng) == "true"
        speakers.append(f"spk{len(speakers)}" if change else speakers[-1])

    tokens = []
    vectors = []
    t = 0.0
    boundary_token_indices = []
    for u, words in enumerate(unit_words):
        if u > 0:
            is_topic = boundary_is_topic[u - 1]
            cue_class = cue_classes[u - 1]
            pause = topo.pause_floor + pause_profile.sample(cue_class, rng)
            t += pause
            boundary_token_indices.append(len(tokens))
            features = {"PAU_DUR": pause}
            for profile in profiles:
                if profile.name == "PAU_DUR":
                    continue
                if profile is turn_profile:
                    features[profile.name] = "true" if speakers[u] != speakers[u - 1] else "false"
                else:
                    features[profile.name] = profile.sample(cue_class, rng)
            vectors.append(
                BoundaryFeatureVector(
                    show_id, u, features, "topic" if is_topic else "nontopic"
                )
            )
        for word in words:
            tokens.append(Token(word, t, t + TOKEN_DURATION, speakers[u], None))
            t += TOKEN_DURATION

    refs = frozenset(
        boundary_token_indices[b] for b, is_topic in enumerate(boundary_is_topic) if is_topic
    )
    show = Show(
        show_id=show_id,
        source_type=topo.source_type,
        tokens=tuple(tokens),
        ref_topic_boundaries=refs,
        duration=tokens[-1].end_time,
    )
    return show, vectors


def _unit_words(model, cluster, role, topo, vocab, rng) -> list[str]:
    if role == "begin" and model.begin_probs is not None:
        probs = model.begin_probs
    elif role == "end" and model.end_probs is not None:
        probs = model.end_probs
    else:
        if topo.digression_rate and rng.random() < topo.digression_rate:
            cluster = int(rng.integers(model.n_clusters))
        probs = model.cluster_probs[cluster]
    n = topo.tokens_per_unit
    is_stop = rng.random(n) < topo.stop_word_rate
    n_stop = int(is_stop.sum())
    stop_idx = rng.integers(len(STOP_WORDS), size=n_stop)
    content_idx = rng.choice(len(probs), size=n - n_stop, p=probs)
    words = []
    si = ci = 0
    for stop in is_stop:
        if stop:
            words.append(STOP_WORDS[stop_idx[si]])
            si += 1
        else:
            words.append(vocab[int(content_idx[ci])])
            ci += 1
    return words


def make_generator_model(
    n_clusters: int,
    words_per_cluster: int = 40,
    shared_words: int = 30,
    shared_mass: float = 0.35,
    seed: int = 0,
    with_begin_end: bool = True,
    begin_end_mass: float = 0.6,
) -> TopicClusterModel:
    """Construct a generator model with partially overlapping cluster vocab.

    Each cluster concentrates (1 - shared_mass) on its own word block and
    spreads shared_mass over a common block, so clusters are distinct but
    confusable. Optional begin/end unigrams put begin_end_mass on dedicated
    formulaic words and the rest on the common block.
    """
    if n_clusters < 1:
        raise ValidationError("need at least one cluster")
    rng = np.random.default_rng(seed)
    cluster_words = [
        [f"t{j:03d}w{w:02d}" for w in range(words_per_cluster)] for j in range(n_clusters)
    ]
    common = [f"common{w:02d}" for w in range(shared_words)]
    begin_words = [f"intro{w:02d}" for w in range(10)] if with_begin_end else []
    end_words = [f"outro{w:02d}" for w in range(10)] if with_begin_end else []
    vocab = sorted(set(w for ws in cluster_words for w in ws) | set(common) | set(begin_words) | set(end_words))
    index = {w: i for i, w in enumerate(vocab)}

    def spread(words, mass, out, weights=None):
        if weights is None:
            weights = rng.random(len(words)) + 0.5
        weights = mass * weights / weights.sum()
        for w, p in zip(words, weights):
            out[index[w]] += p

    # one weighting of the common block shared by every cluster, so common
    # words carry no topic signal
    common_weights = rng.random(len(common)) + 0.5 if common else None
    cluster_probs = np.zeros((n_clusters, len(vocab)))
    for j in range(n_clusters):
        spread(cluster_words[j], 1.0 - shared_mass, cluster_probs[j])
        spread(common, shared_mass, cluster_probs[j], common_weights)

    global_probs = np.append(cluster_probs.mean(axis=0), 0.0) + 1e-6
    global_probs /= global_probs.sum()

    begin_probs = end_probs = None
    if with_begin_end:
        begin_probs = np.zeros(len(vocab))
        spread(begin_words, begin_end_mass, begin_probs)
        spread(common, 1.0 - begin_end_mass, begin_probs, common_weights)
        end_probs = np.zeros(len(vocab))
        spread(end_words, begin_end_mass, end_probs)
        spread(common, 1.0 - begin_end_mass, end_probs, common_weights)

    return TopicClusterModel(
        vocab=tuple(vocab),
        cluster_probs=cluster_probs,
        global_probs=global_probs,
        lam=0.9,
        stoplist=frozenset(STOP_WORDS),
        begin_probs=begin_probs,
        end_probs=end_probs,
    )


def stories_from_shows(shows: list[Show], id_prefix: str = "story") -> list[Story]:
    """One story per reference segment of each show (stop words included)."""
    stories = []
    for show in shows:
        edges = [0] + show.sorted_boundaries() + [show.n_tokens]
        for k, (a, b) in enumerate(zip(edges, edges[1:])):
            words = [t.text for t in show.tokens[a:b]]
            stories.append(
                Story(f"{id_prefix}_{show.show_id}_{k:03d}", Counter(words), len(words))
            )
    return stories
