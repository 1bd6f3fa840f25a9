"""Topic-cluster unigram language models.

Stories are clustered with a multipass k-means over smoothed unigram
distributions (symmetrized KL distance, deterministic farthest-point
seeding). Each cluster gets a content-word unigram LM, interpolated with an
add-one-smoothed global unigram so every query word keeps positive
probability; optional begin/end unigrams model segment-initial and
segment-final sentences.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Story
from .errors import ValidationError

log = logging.getLogger(__name__)

UNK = "<unk>"

# mixing weight toward uniform when embedding stories for clustering
_STORY_SMOOTHING = 0.01
_CONVERGENCE_EPS = 1e-6


def content_bag(story: Story, stoplist: frozenset, min_word_len: int = 1) -> Counter:
    """Drop stop words and words shorter than min_word_len; lowercases."""
    bag: Counter = Counter()
    for word, count in story.word_counts.items():
        w = word.lower()
        if len(w) < min_word_len or w in stoplist:
            continue
        bag[w] += count
    return bag


def content_words(tokens, stoplist: frozenset, min_word_len: int = 1) -> list[str]:
    out = []
    for text in tokens:
        w = text.lower()
        if len(w) >= min_word_len and w not in stoplist:
            out.append(w)
    return out


@dataclass(frozen=True)
class ClusterResult:
    assignment: np.ndarray  # story -> cluster
    objectives: tuple[float, ...]  # objective after each accepted pass


def _story_matrix(bags: list[Counter], vocab: dict) -> np.ndarray:
    """Rows are per-story distributions mixed with uniform for finite KL."""
    n, v = len(bags), len(vocab)
    mat = np.zeros((n, v))
    for i, bag in enumerate(bags):
        total = sum(bag.values())
        if total:
            for word, count in bag.items():
                mat[i, vocab[word]] = count / total
    return (1.0 - _STORY_SMOOTHING) * mat + _STORY_SMOOTHING / v


def _sym_kl_to(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    # sum_w (p - c) * log(p / c), rows of `points` against one center
    diff = points - center
    return np.sum(diff * (np.log(points) - np.log(center)), axis=1)


def _distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.stack([_sym_kl_to(points, c) for c in centers], axis=1)


def _farthest_point_seeds(points: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    seeds = [int(rng.integers(len(points)))]
    min_dist = _sym_kl_to(points, points[seeds[0]])
    for _ in range(1, c):
        nxt = int(np.argmax(min_dist))
        seeds.append(nxt)
        min_dist = np.minimum(min_dist, _sym_kl_to(points, points[nxt]))
    return points[seeds].copy()


def cluster_stories(
    stories: list[Story],
    c: int,
    seed: int,
    passes: int = 20,
    stoplist: frozenset = frozenset(),
    min_word_len: int = 1,
) -> ClusterResult:
    """Assign each story to one of c clusters by multipass k-means.

    Each pass recomputes mean centroids and reassigns; empty clusters are
    re-seeded from the story farthest from its centroid. A pass that fails
    to lower the objective is reverted, so the recorded objective sequence
    is non-increasing. passes=0 returns the seeding-based assignment.
    """
    if c <= 0:
        raise ValidationError("cluster count must be positive")
    if len(stories) < c:
        raise ValidationError(f"need at least {c} stories for {c} clusters, got {len(stories)}")
    bags = [content_bag(s, stoplist, min_word_len) for s in stories]
    vocab = {w: i for i, w in enumerate(sorted({w for bag in bags for w in bag}))}
    if not vocab:
        raise ValidationError("no content words in training stories")
    points = _story_matrix(bags, vocab)
    rng = np.random.default_rng(seed)

    centers = _farthest_point_seeds(points, c, rng)
    dist = _distances(points, centers)
    assignment = np.argmin(dist, axis=1)
    assignment = _fix_empty(points, centers, assignment, c)
    objective = float(np.sum(_distances(points, centers)[np.arange(len(points)), assignment]))
    objectives = [objective]

    for _ in range(passes):
        new_centers = np.empty_like(centers)
        for j in range(c):
            members = points[assignment == j]
            new_centers[j] = members.mean(axis=0) if len(members) else centers[j]
        new_dist = _distances(points, new_centers)
        new_assignment = np.argmin(new_dist, axis=1)
        new_assignment = _fix_empty(points, new_centers, new_assignment, c)
        new_objective = float(
            np.sum(_distances(points, new_centers)[np.arange(len(points)), new_assignment])
        )
        if new_objective > objective - _CONVERGENCE_EPS:
            if new_objective < objective:
                assignment, objective = new_assignment, new_objective
                objectives.append(objective)
            break
        assignment, centers, objective = new_assignment, new_centers, new_objective
        objectives.append(objective)
    log.debug("k-means finished after %d accepted passes, objective %.6f", len(objectives) - 1, objective)
    return ClusterResult(assignment=assignment, objectives=tuple(objectives))


def _fix_empty(points, centers, assignment, c) -> np.ndarray:
    assignment = assignment.copy()
    for j in range(c):
        if np.any(assignment == j):
            continue
        dist = _distances(points, centers)
        own = dist[np.arange(len(points)), assignment]
        # do not steal the last member of another cluster
        counts = np.bincount(assignment, minlength=c)
        own[counts[assignment] <= 1] = -np.inf
        farthest = int(np.argmax(own))
        assignment[farthest] = j
        centers[j] = points[farthest]
    return assignment


@dataclass(frozen=True)
class TopicClusterModel:
    """Smoothed unigram LMs for C topic clusters plus global/BEGIN/END models.

    ``cluster_probs`` rows are raw in-cluster relative frequencies over
    ``vocab``; ``global_probs`` has one extra slot for the unknown word and
    is add-one smoothed. Query probability of word w in cluster j is
    lam * cluster[j, w] + (1 - lam) * global[w].
    """

    vocab: tuple[str, ...]
    cluster_probs: np.ndarray  # [C, V]
    global_probs: np.ndarray  # [V + 1], UNK last
    lam: float
    stoplist: frozenset
    min_word_len: int = 1
    begin_probs: np.ndarray | None = None  # [V], raw relative frequencies
    end_probs: np.ndarray | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_probs)

    @property
    def has_begin_end(self) -> bool:
        return self.begin_probs is not None and self.end_probs is not None

    def word_index(self, word: str) -> int:
        idx = self._index().get(word)
        return len(self.vocab) if idx is None else idx

    def _index(self) -> dict:
        cached = getattr(self, "_index_cache", None)
        if cached is None:
            cached = {w: i for i, w in enumerate(self.vocab)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def smoothed_prob(self, j: int, word: str) -> float:
        wi = self.word_index(word.lower())
        in_cluster = self.cluster_probs[j, wi] if wi < len(self.vocab) else 0.0
        return self.lam * in_cluster + (1.0 - self.lam) * self.global_probs[wi]

    def _bag_indices(self, token_texts) -> tuple[np.ndarray, np.ndarray]:
        words = content_words(token_texts, self.stoplist, self.min_word_len)
        counts: Counter = Counter(self.word_index(w) for w in words)
        idx = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
        cnt = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
        return idx, cnt

    def _mixture_loglikes(self, idx, cnt, raw_row_for_in_vocab) -> float:
        v = len(self.vocab)
        in_vocab = idx < v
        probs = (1.0 - self.lam) * self.global_probs[idx]
        probs[in_vocab] += self.lam * raw_row_for_in_vocab[idx[in_vocab]]
        return float(np.dot(np.log(probs), cnt))


def estimate_model(
    stories: list[Story],
    assignment,
    lam: float,
    stoplist: frozenset,
    min_word_len: int = 1,
    begin_bags: list[Counter] | None = None,
    end_bags: list[Counter] | None = None,
) -> TopicClusterModel:
    """Estimate cluster, global, and optional begin/end unigrams.

    ``begin_bags`` / ``end_bags`` are word bags of segment-initial /
    segment-final chop units from boundary-annotated training data; both or
    neither must be given.
    """
    if not 0 < lam <= 1:
        raise ValidationError("interpolation weight must lie in (0, 1]")
    assignment = np.asarray(assignment)
    if len(assignment) != len(stories):
        raise ValidationError("assignment length does not match story count")
    if (begin_bags is None) != (end_bags is None):
        raise ValidationError("begin and end bags must be supplied together")

    bags = [content_bag(s, stoplist, min_word_len) for s in stories]
    extra = list(begin_bags or []) + list(end_bags or [])
    extra = [_lower_bag(bag, stoplist, min_word_len) for bag in extra]
    vocab_words = sorted(
        {w for bag in bags for w in bag} | {w for bag in extra for w in bag}
    )
    vocab = {w: i for i, w in enumerate(vocab_words)}
    v = len(vocab)
    if v == 0:
        raise ValidationError("no content words in training stories")

    c = int(assignment.max()) + 1 if len(assignment) else 0
    cluster_counts = np.zeros((c, v))
    for bag, j in zip(bags, assignment):
        for word, count in bag.items():
            cluster_counts[j, vocab[word]] += count
    totals = cluster_counts.sum(axis=1)
    if np.any(totals == 0):
        empty = int(np.argmin(totals))
        raise ValidationError(f"cluster {empty} has no content words after estimation")
    cluster_probs = cluster_counts / totals[:, None]

    global_counts = cluster_counts.sum(axis=0)
    global_probs = np.append(global_counts, 0.0) + 1.0
    global_probs /= global_probs.sum()

    begin_probs = end_probs = None
    if begin_bags is not None:
        begin_probs = _rel_freq(begin_bags, vocab, stoplist, min_word_len, "begin")
        end_probs = _rel_freq(end_bags, vocab, stoplist, min_word_len, "end")

    return TopicClusterModel(
        vocab=tuple(vocab_words),
        cluster_probs=cluster_probs,
        global_probs=global_probs,
        lam=lam,
        stoplist=stoplist,
        min_word_len=min_word_len,
        begin_probs=begin_probs,
        end_probs=end_probs,
    )


def _lower_bag(bag: Counter, stoplist: frozenset, min_word_len: int) -> Counter:
    out: Counter = Counter()
    for word, count in bag.items():
        w = word.lower()
        if len(w) >= min_word_len and w not in stoplist:
            out[w] += count
    return out


def _rel_freq(bags, vocab, stoplist, min_word_len, what) -> np.ndarray:
    counts = np.zeros(len(vocab))
    for bag in bags:
        for word, count in _lower_bag(bag, stoplist, min_word_len).items():
            counts[vocab[word]] += count
    total = counts.sum()
    if total == 0:
        raise ValidationError(f"no content words in {what} units")
    return counts / total


def unit_log_likelihood(model: TopicClusterModel, j: int, token_texts) -> float:
    """Log probability of a unit's content words under cluster j.

    Stop words contribute nothing; a unit with no content words scores 0.
    """
    if not 0 <= j < model.n_clusters:
        raise ValidationError(f"cluster index {j} out of range")
    idx, cnt = model._bag_indices(token_texts)
    if len(idx) == 0:
        return 0.0
    return model._mixture_loglikes(idx, cnt, model.cluster_probs[j])


def begin_log_likelihood(model: TopicClusterModel, token_texts) -> float:
    if model.begin_probs is None:
        raise ValidationError("model has no begin unigram")
    idx, cnt = model._bag_indices(token_texts)
    if len(idx) == 0:
        return 0.0
    return model._mixture_loglikes(idx, cnt, model.begin_probs)


def end_log_likelihood(model: TopicClusterModel, token_texts) -> float:
    if model.end_probs is None:
        raise ValidationError("model has no end unigram")
    idx, cnt = model._bag_indices(token_texts)
    if len(idx) == 0:
        return 0.0
    return model._mixture_loglikes(idx, cnt, model.end_probs)


def unit_loglike_matrix(
    model: TopicClusterModel, unit_token_texts: list, include_begin_end: bool
) -> np.ndarray:
    """Emission log-likelihood matrix [n_units x n_unit_states].

    Columns are the C clusters, then BEGIN and END when requested.
    """
    n = len(unit_token_texts)
    cols = model.n_clusters + (2 if include_begin_end else 0)
    if include_begin_end and not model.has_begin_end:
        raise ValidationError("model has no begin/end unigrams")
    mat = np.zeros((n, cols))
    for i, texts in enumerate(unit_token_texts):
        idx, cnt = model._bag_indices(texts)
        if len(idx) == 0:
            continue
        v = len(model.vocab)
        in_vocab = idx < v
        base = (1.0 - model.lam) * model.global_probs[idx]
        probs = np.tile(base, (model.n_clusters, 1))
        probs[:, in_vocab] += model.lam * model.cluster_probs[:, idx[in_vocab]]
        mat[i, : model.n_clusters] = np.log(probs) @ cnt
        if include_begin_end:
            for col, raw in ((model.n_clusters, model.begin_probs), (model.n_clusters + 1, model.end_probs)):
                p = base.copy()
                p[in_vocab] += model.lam * raw[idx[in_vocab]]
                mat[i, col] = float(np.dot(np.log(p), cnt))
    return mat


MODEL_FORMAT = "topicseg-lm"
MODEL_VERSION = 1


def _dist_to_dict(vocab, probs) -> dict:
    return {vocab[i]: float(p) for i, p in enumerate(probs) if p > 0}


def save_model(model: TopicClusterModel, path: str) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_clusters": model.n_clusters,
        "lambda": model.lam,
        "min_word_len": model.min_word_len,
        "vocab": list(model.vocab),
        "stoplist": sorted(model.stoplist),
        "stoplist_sha256": stoplist_digest(model.stoplist),
        "global_unigram": _dist_to_dict(list(model.vocab) + [UNK], model.global_probs),
        "cluster_unigrams": [_dist_to_dict(model.vocab, row) for row in model.cluster_probs],
        "begin_unigram": None if model.begin_probs is None else _dist_to_dict(model.vocab, model.begin_probs),
        "end_unigram": None if model.end_probs is None else _dist_to_dict(model.vocab, model.end_probs),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path: str) -> TopicClusterModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValidationError(f"unsupported model document in {path}")
    vocab = list(doc["vocab"])
    index = {w: i for i, w in enumerate(vocab)}
    v = len(vocab)

    def to_row(dist: dict, size: int, extra: dict | None = None) -> np.ndarray:
        row = np.zeros(size)
        for word, p in dist.items():
            if extra and word in extra:
                row[extra[word]] = p
            else:
                row[index[word]] = p
        return row

    cluster_probs = np.stack([to_row(d, v) for d in doc["cluster_unigrams"]])
    global_probs = to_row(doc["global_unigram"], v + 1, extra={UNK: v})
    begin = doc.get("begin_unigram")
    end = doc.get("end_unigram")
    return TopicClusterModel(
        vocab=tuple(vocab),
        cluster_probs=cluster_probs,
        global_probs=global_probs,
        lam=doc["lambda"],
        stoplist=frozenset(doc["stoplist"]),
        min_word_len=doc["min_word_len"],
        begin_probs=None if begin is None else to_row(begin, v),
        end_probs=None if end is None else to_row(end, v),
    )


def stoplist_digest(stoplist: frozenset) -> str:
    payload = "\n".join(sorted(stoplist)).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def load_stoplist(path: str) -> frozenset:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())


def collect_begin_end_bags(shows_units_labels) -> tuple[list[Counter], list[Counter]]:
    """Harvest segment-initial and segment-final unit bags from chopped shows.

    ``shows_units_labels`` yields (show, units, labels) triples where labels
    mark the reference topic boundaries between consecutive units.
    """
    begin_bags: list[Counter] = []
    end_bags: list[Counter] = []
    for show, units, labels in shows_units_labels:
        starts = [0] + [i + 1 for i, topic in enumerate(labels) if topic]
        ends = [i for i, topic in enumerate(labels) if topic] + [len(units) - 1]
        for u in starts:
            begin_bags.append(Counter(t.text for t in show.tokens[units[u].first : units[u].last + 1]))
        for u in ends:
            end_bags.append(Counter(t.text for t in show.tokens[units[u].first : units[u].last + 1]))
    return begin_bags, end_bags
