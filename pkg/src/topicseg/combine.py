"""Knowledge-source combination and held-out parameter tuning.

Four decision modes share one decode path:

* ``lm``     words only: Viterbi over the topic HMM.
* ``pm``     boundary evidence only: the same HMM with uniform unit
             likelihoods, driven by tree posteriors converted to
             likelihoods.
* ``cm-dt``  the HMM's boundary posterior becomes an extra tree feature
             (POST_TOPIC) and the augmented tree's posterior is thresholded.
* ``cm-hmm`` tree posteriors are converted to boundary-state likelihoods
             (exponentiated by the combination weight) inside the HMM.

Tuning is an explicit grid search minimizing the word-based segmentation
cost, per source type with a pooled global fallback.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .chopping import ChopCriterion, boundary_time, boundary_token_index, chop, project_boundaries
from .corpus import BoundaryFeatureVector, Show
from .errors import ValidationError
from .evaluation import EvalConfig, WordSegmentation, c_seg, word_based
from .hmm import HmmConfig, SegmentationHmm, SegmentationHypothesis, boundary_posteriors, viterbi_segment
from .topic_lm import TopicClusterModel, unit_loglike_matrix
from .tree import DecisionTree, predict

log = logging.getLogger(__name__)

LM_ONLY = "lm"
PM_ONLY = "pm"
CM_DT = "cm-dt"
CM_HMM = "cm-hmm"
MODES = (LM_ONLY, PM_ONLY, CM_DT, CM_HMM)

POSTERIOR_FEATURE = "POST_TOPIC"

# leaf posteriors of exactly 0 or 1 occur; an unclamped log would veto
# Viterbi paths irreversibly
_CLAMP = 1e-6


@dataclass(frozen=True)
class ModeParams:
    tsp: float = 1.0
    mcw: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ValidationError("threshold must lie in [0, 1]")
        if self.tsp < 0:
            raise ValidationError("tsp must be >= 0")
        if self.mcw < 0:
            raise ValidationError("mcw must be >= 0")


@dataclass
class CombinerConfig:
    mode: str
    params: ModeParams
    per_source: dict = field(default_factory=dict)  # source_type -> ModeParams
    tuning_table: list = field(default_factory=list)  # (source, params, c_seg)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")

    def for_source(self, source_type: str) -> ModeParams:
        return self.per_source.get(source_type, self.params)


def cm_dt_features(base: BoundaryFeatureVector, hmm_posterior: float) -> BoundaryFeatureVector:
    """Add the HMM's boundary posterior as the POST_TOPIC feature."""
    if not 0 <= hmm_posterior <= 1:
        raise ValidationError(f"posterior {hmm_posterior} outside [0, 1]")
    if POSTERIOR_FEATURE in base.features:
        raise ValidationError(f"feature {POSTERIOR_FEATURE} already present")
    features = dict(base.features)
    features[POSTERIOR_FEATURE] = float(hmm_posterior)
    return BoundaryFeatureVector(base.show_id, base.boundary_index, features, base.label)


def cm_dt_decide(
    tree: DecisionTree, vectors: list[BoundaryFeatureVector], threshold: float, show_id: str = ""
) -> SegmentationHypothesis:
    """Declare a boundary wherever the tree posterior strictly exceeds the threshold."""
    if not 0 <= threshold <= 1:
        raise ValidationError("threshold must lie in [0, 1]")
    posteriors = [predict(tree, v) for v in vectors]
    return SegmentationHypothesis(
        show_id=show_id,
        decisions=tuple(p > threshold for p in posteriors),
        posteriors=tuple(posteriors),
    )


def posterior_to_loglike(p: float, balanced_training: bool) -> tuple[float, float]:
    """Convert a tree posterior into (loglike_yes, loglike_no).

    Valid only when the tree was trained with equal class priors, which
    makes posteriors proportional to class-conditional likelihoods; the
    posterior is clamped away from 0/1 before taking logs.
    """
    if not balanced_training:
        raise ValidationError(
            "tree posteriors are likelihood-proportional only with balanced training; "
            "downsample the training set first"
        )
    if not 0 <= p <= 1:
        raise ValidationError(f"posterior {p} outside [0, 1]")
    p = min(max(p, _CLAMP), 1.0 - _CLAMP)
    return float(np.log(p)), float(np.log(1.0 - p))


@dataclass
class PreparedShow:
    """Everything the decoders need for one show, computed once."""

    show: Show
    units: list
    ref_labels: list  # bool per inter-unit boundary
    unreachable: list  # ref token indices not on any unit break
    unit_loglikes: np.ndarray
    feature_vectors: list | None = None  # per boundary, possibly None entries
    tree_posteriors: np.ndarray | None = None  # balanced-tree posterior per boundary

    @property
    def show_id(self) -> str:
        return self.show.show_id

    @property
    def source_type(self) -> str:
        return self.show.source_type

    @property
    def n_boundaries(self) -> int:
        return len(self.units) - 1

    def boundary_token_indices(self) -> list[int]:
        return [boundary_token_index(self.units, b) for b in range(1, len(self.units))]

    def boundary_times(self) -> list[float]:
        return [boundary_time(self.show, self.units, b) for b in range(1, len(self.units))]

    def ref_word_segmentation(self) -> WordSegmentation:
        return WordSegmentation(
            self.show_id, self.show.n_tokens, tuple(self.show.sorted_boundaries())
        )

    def hyp_word_segmentation(self, decisions) -> WordSegmentation:
        tokens = self.boundary_token_indices()
        bounds = tuple(t for t, d in zip(tokens, decisions) if d)
        return WordSegmentation(self.show_id, self.show.n_tokens, bounds)


def prepare_show(
    show: Show,
    criterion: ChopCriterion,
    model: TopicClusterModel,
    hmm: SegmentationHmm,
    feature_map: dict | None = None,
    balanced_tree: DecisionTree | None = None,
) -> PreparedShow:
    """Chop, project references, compute emissions, join features."""
    units = chop(show, criterion)
    ref_labels, unreachable = project_boundaries(show, units)
    if unreachable:
        log.debug("show %s: %d reference boundaries unreachable", show.show_id, len(unreachable))
    texts = [[t.text for t in show.tokens[u.first : u.last + 1]] for u in units]
    loglikes = unit_loglike_matrix(model, texts, hmm.use_begin_end)
    vectors = None
    if feature_map is not None:
        vectors = [feature_map.get((show.show_id, b)) for b in range(1, len(units))]
    posteriors = None
    if balanced_tree is not None:
        if vectors is None:
            raise ValidationError("tree posteriors need boundary feature vectors")
        posteriors = np.array(
            [0.5 if v is None else predict(balanced_tree, v) for v in vectors]
        )
    return PreparedShow(
        show=show,
        units=units,
        ref_labels=ref_labels,
        unreachable=unreachable,
        unit_loglikes=loglikes,
        feature_vectors=vectors,
        tree_posteriors=posteriors,
    )


def _boundary_loglikes(prepared: PreparedShow, balanced: bool) -> np.ndarray:
    if prepared.tree_posteriors is None:
        raise ValidationError(f"show {prepared.show_id} has no tree posteriors")
    pairs = [posterior_to_loglike(p, balanced) for p in prepared.tree_posteriors]
    return np.asarray(pairs)


def decode_show(
    prepared: PreparedShow,
    mode: str,
    params: ModeParams,
    hmm: SegmentationHmm,
    cm_dt_tree: DecisionTree | None = None,
    tree_balanced: bool = True,
    with_posterior: bool = True,
) -> SegmentationHypothesis:
    """Decode one prepared show under the given mode and parameters."""
    if prepared.n_boundaries == 0:
        return SegmentationHypothesis(prepared.show_id, (), (), None)
    if mode == LM_ONLY:
        hyp = viterbi_segment(
            hmm, prepared.unit_loglikes, None, show_id=prepared.show_id, tsp=params.tsp
        )
        posts = (
            boundary_posteriors(hmm, prepared.unit_loglikes, None, tsp=params.tsp)[0]
            if with_posterior
            else None
        )
    elif mode == PM_ONLY:
        likes = _boundary_loglikes(prepared, tree_balanced)
        uniform = np.zeros_like(prepared.unit_loglikes)
        hyp = viterbi_segment(hmm, uniform, likes, show_id=prepared.show_id, tsp=params.tsp)
        posts = (
            boundary_posteriors(hmm, uniform, likes, tsp=params.tsp)[0] if with_posterior else None
        )
    elif mode == CM_HMM:
        likes = _boundary_loglikes(prepared, tree_balanced)
        hyp = viterbi_segment(
            hmm, prepared.unit_loglikes, likes, show_id=prepared.show_id, tsp=params.tsp
        )
        posts = (
            boundary_posteriors(hmm, prepared.unit_loglikes, likes, tsp=params.tsp)[0]
            if with_posterior
            else None
        )
    elif mode == CM_DT:
        if cm_dt_tree is None:
            raise ValidationError("cm-dt decoding needs the augmented tree")
        vectors = augment_show_vectors(prepared, hmm, params.tsp)
        return cm_dt_decide(cm_dt_tree, vectors, params.threshold, show_id=prepared.show_id)
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    if posts is not None:
        hyp = SegmentationHypothesis(
            hyp.show_id, hyp.decisions, tuple(float(p) for p in posts), hyp.unit_states
        )
    return hyp


def augment_show_vectors(prepared: PreparedShow, hmm: SegmentationHmm, tsp: float) -> list:
    """Feature vectors with the words-only HMM posterior added per boundary."""
    if prepared.feature_vectors is None:
        raise ValidationError(f"show {prepared.show_id} has no feature vectors")
    p_yes, _ = boundary_posteriors(hmm, prepared.unit_loglikes, None, tsp=tsp)
    out = []
    for b, vec in enumerate(prepared.feature_vectors):
        base = (
            vec
            if vec is not None
            else BoundaryFeatureVector(prepared.show_id, b + 1, {}, None)
        )
        out.append(cm_dt_features(base, min(max(float(p_yes[b]), 0.0), 1.0)))
    return out


def score_hypotheses(prepared_shows: list, hypotheses: list, config: EvalConfig) -> float:
    refs = {p.show_id: p.ref_word_segmentation() for p in prepared_shows}
    hyps = {
        p.show_id: p.hyp_word_segmentation(h.decisions)
        for p, h in zip(prepared_shows, hypotheses)
    }
    p_miss, p_fa = word_based(refs, hyps, config.k)
    return c_seg(p_miss, p_fa, config)


def _grid_points(mode: str, param_grid: dict) -> list[ModeParams]:
    axes = {"tsp": [1.0], "mcw": [1.0], "threshold": [0.5]}
    used = {"lm": ("tsp",), "pm": ("tsp", "mcw"), "cm-hmm": ("tsp", "mcw"), "cm-dt": ("tsp", "threshold")}[mode]
    for key in used:
        if key in param_grid:
            values = list(param_grid[key])
            if not values:
                raise ValidationError(f"empty grid for {key}")
            axes[key] = values
    points = []
    for tsp, mcw, threshold in itertools.product(axes["tsp"], axes["mcw"], axes["threshold"]):
        points.append(ModeParams(tsp=tsp, mcw=mcw, threshold=threshold))
    return points


def tune(
    dev_shows: list,
    mode: str,
    param_grid: dict,
    hmm_config,
    cm_dt_tree: DecisionTree | None = None,
    tree_balanced: bool = True,
    eval_config: EvalConfig = EvalConfig(),
) -> CombinerConfig:
    """Grid-search parameters minimizing word-based segmentation cost.

    ``dev_shows`` are PreparedShow objects with reference boundaries. The
    best point per source type is recorded alongside a pooled global
    fallback; the full (source, params, cost) table is kept on the config.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    if not dev_shows:
        raise ValidationError("no development shows")
    if not any(p.show.ref_topic_boundaries for p in dev_shows):
        raise ValidationError("development shows carry no reference boundaries")
    points = _grid_points(mode, param_grid)

    sources = sorted({p.source_type for p in dev_shows})
    table = []
    global_best = None
    per_source_best: dict = {}
    for params in points:
        hmm = SegmentationHmm(_with_mcw(hmm_config, params.mcw))
        hyps = [
            decode_show(p, mode, params, hmm, cm_dt_tree, tree_balanced, with_posterior=False)
            for p in dev_shows
        ]
        cost = score_hypotheses(dev_shows, hyps, eval_config)
        table.append(("*", params, cost))
        if global_best is None or cost < global_best[1]:
            global_best = (params, cost)
        for source in sources:
            members = [(p, h) for p, h in zip(dev_shows, hyps) if p.source_type == source]
            try:
                source_cost = score_hypotheses([p for p, _ in members], [h for _, h in members], eval_config)
            except ValidationError:
                continue  # degenerate denominator for this source at this point
            table.append((source, params, source_cost))
            best = per_source_best.get(source)
            if best is None or source_cost < best[1]:
                per_source_best[source] = (params, source_cost)

    config = CombinerConfig(
        mode=mode,
        params=global_best[0],
        per_source={s: b[0] for s, b in per_source_best.items()},
        tuning_table=table,
    )
    log.info(
        "tuned %s: global cost %.4f at %s; %d source-specific settings",
        mode,
        global_best[1],
        global_best[0],
        len(per_source_best),
    )
    return config


def _with_mcw(hmm_config, mcw: float):
    return HmmConfig(
        tsp=hmm_config.tsp,
        n_clusters=hmm_config.n_clusters,
        use_begin_end=hmm_config.use_begin_end,
        mcw=mcw,
    )


CONFIG_FORMAT = "topicseg-combiner"
CONFIG_VERSION = 1


def _params_to_dict(params: ModeParams) -> dict:
    return {"tsp": params.tsp, "mcw": params.mcw, "threshold": params.threshold}


def save_config(config: CombinerConfig, path: str) -> None:
    doc = {
        "format": CONFIG_FORMAT,
        "version": CONFIG_VERSION,
        "mode": config.mode,
        "params": _params_to_dict(config.params),
        "per_source": {s: _params_to_dict(p) for s, p in sorted(config.per_source.items())},
        "tuning_table": [
            {"source": s, "params": _params_to_dict(p), "c_seg": cost}
            for s, p, cost in config.tuning_table
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_config(path: str) -> CombinerConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CONFIG_FORMAT or doc.get("version") != CONFIG_VERSION:
        raise ValidationError(f"unsupported combiner config in {path}")
    return CombinerConfig(
        mode=doc["mode"],
        params=ModeParams(**doc["params"]),
        per_source={s: ModeParams(**p) for s, p in doc["per_source"].items()},
        tuning_table=[
            (row["source"], ModeParams(**row["params"]), row["c_seg"])
            for row in doc.get("tuning_table", [])
        ],
    )
