"""Segmentation HMM: topic states, optional BEGIN/END, boundary pseudostates.

The lattice alternates unit-emitting states with boundary pseudostates.
Unit states are the C topic clusters plus optional shared BEGIN and END
states; a segment is BEGIN? T_j* END? (one cluster j throughout, at least
one unit). Every inter-unit transition passes through exactly one boundary
pseudostate: N_s continues the current segment (weight 1) and B_s closes it
(weight TSP on the arc into the next segment-initial state, for any
destination cluster including the same one). Transition weights are not
normalized; all arithmetic is in the log domain.

Boundary pseudostates emit nothing by default (log-likelihood 0). When
per-boundary log-likelihoods are supplied, B states add mcw * loglike_yes
and N states add mcw * loglike_no, which makes Viterbi return the most
likely segmentation under words and boundary evidence jointly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .topic_lm import TopicClusterModel


@dataclass(frozen=True)
class HmmConfig:
    tsp: float  # topic switch penalty, >= 0 (0 forbids switching)
    n_clusters: int
    use_begin_end: bool = False
    mcw: float = 1.0  # exponent on boundary likelihoods

    def __post_init__(self):
        if self.tsp < 0:
            raise ValidationError("topic switch penalty must be >= 0")
        if self.mcw < 0:
            raise ValidationError("model combination weight must be >= 0")
        if self.n_clusters < 1:
            raise ValidationError("need at least one topic cluster")


@dataclass(frozen=True)
class SegmentationHypothesis:
    show_id: str
    decisions: tuple[bool, ...]  # one per inter-unit boundary
    posteriors: tuple[float, ...] | None = None  # P(boundary) per decision slot
    unit_states: tuple[str, ...] | None = None  # diagnostic state label per unit

    @property
    def n_boundaries(self) -> int:
        return len(self.decisions)

    def yes_count(self) -> int:
        return sum(self.decisions)


class SegmentationHmm:
    """Topology and weights; immutable once built."""

    def __init__(self, config: HmmConfig):
        self.config = config
        c = config.n_clusters
        self.n_clusters = c
        self.use_begin_end = config.use_begin_end
        self.n_unit_states = c + (2 if config.use_begin_end else 0)
        self.begin = c if config.use_begin_end else None
        self.end = c + 1 if config.use_begin_end else None
        self.log_tsp = np.log(config.tsp) if config.tsp > 0 else -np.inf

        initial = np.zeros(self.n_unit_states, dtype=bool)
        initial[:c] = True
        final = np.zeros(self.n_unit_states, dtype=bool)
        final[:c] = True
        if config.use_begin_end:
            initial[self.begin] = True
            final[self.end] = True
        self.initial_mask = initial
        self.final_mask = final

    def state_label(self, s: int) -> str:
        if self.begin is not None and s == self.begin:
            return "BEGIN"
        if self.end is not None and s == self.end:
            return "END"
        return f"T{s}"

    @property
    def n_boundary_states(self) -> int:
        # one N state per segment-continuable source, one B state per
        # segment-final source
        per_kind = self.n_clusters + (1 if self.use_begin_end else 0)
        return 2 * per_kind

    @property
    def n_states(self) -> int:
        return self.n_unit_states + self.n_boundary_states


def build_hmm(model: TopicClusterModel | None, config: HmmConfig) -> SegmentationHmm:
    """Validate config against the model and construct the topology."""
    if model is not None:
        if model.n_clusters != config.n_clusters:
            raise ValidationError(
                f"config expects {config.n_clusters} clusters but model has {model.n_clusters}"
            )
        if config.use_begin_end and not model.has_begin_end:
            raise ValidationError("use_begin_end requires begin/end unigrams in the model")
    return SegmentationHmm(config)


def _check_matrices(hmm, unit_loglikes, boundary_loglikes):
    unit_loglikes = np.asarray(unit_loglikes, dtype=float)
    if unit_loglikes.ndim != 2 or unit_loglikes.shape[1] != hmm.n_unit_states:
        raise ValidationError(
            f"unit log-likelihoods must be [n_units x {hmm.n_unit_states}], got {unit_loglikes.shape}"
        )
    n = unit_loglikes.shape[0]
    if n == 0:
        raise ValidationError("no units to decode")
    if np.any(np.isnan(unit_loglikes)) or np.any(unit_loglikes == np.inf):
        raise ValidationError("unit log-likelihoods must be finite or -inf")
    if boundary_loglikes is not None:
        boundary_loglikes = np.asarray(boundary_loglikes, dtype=float)
        if boundary_loglikes.shape != (n - 1, 2):
            raise ValidationError(
                f"boundary log-likelihoods must be [{n - 1} x 2], got {boundary_loglikes.shape}"
            )
    return unit_loglikes, boundary_loglikes


def _boundary_terms(hmm, boundary_loglikes, i):
    if boundary_loglikes is None or hmm.config.mcw == 0:
        return 0.0, 0.0
    return (
        hmm.config.mcw * boundary_loglikes[i, 0],
        hmm.config.mcw * boundary_loglikes[i, 1],
    )


def _logsumexp(values: np.ndarray) -> float:
    hi = np.max(values)
    if hi == -np.inf:
        return -np.inf
    return float(hi + np.log(np.sum(np.exp(values - hi))))


def _resolve_log_tsp(hmm: SegmentationHmm, tsp: float | None) -> float:
    if tsp is None:
        return hmm.log_tsp
    if tsp < 0:
        raise ValidationError("topic switch penalty must be >= 0")
    return np.log(tsp) if tsp > 0 else -np.inf


def viterbi_segment(
    hmm: SegmentationHmm,
    unit_loglikes,
    boundary_loglikes=None,
    show_id: str = "",
    tsp: float | None = None,
) -> SegmentationHypothesis:
    """Best state path; a boundary is yes iff the path takes a B pseudostate.

    Ties prefer the lower-numbered state and the segment-continuing route.
    ``tsp`` overrides the config's penalty (per-source tuning).
    """
    unit_loglikes, boundary_loglikes = _check_matrices(hmm, unit_loglikes, boundary_loglikes)
    n = unit_loglikes.shape[0]
    c = hmm.n_clusters
    log_tsp = _resolve_log_tsp(hmm, tsp)

    delta = np.where(hmm.initial_mask, unit_loglikes[0], -np.inf)
    if np.all(delta == -np.inf):
        raise ValidationError("no feasible path: first unit has no finite likelihood")
    # back[i] records (took_boundary, predecessor) for the transition into unit i
    back_route = np.zeros((n, hmm.n_unit_states), dtype=bool)
    back_pred = np.zeros((n, hmm.n_unit_states), dtype=np.int64)

    topic_ids = np.arange(c)
    for i in range(1, n):
        ll_yes, ll_no = _boundary_terms(hmm, boundary_loglikes, i - 1)
        finals = np.where(hmm.final_mask, delta, -np.inf)
        b_pred = int(np.argmax(finals))
        b_score = finals[b_pred] + log_tsp + ll_yes

        # segment-continuing route per target; BEGIN has none
        n_score = np.full(hmm.n_unit_states, -np.inf)
        n_pred = np.full(hmm.n_unit_states, -1, dtype=np.int64)
        if hmm.use_begin_end:
            from_begin = delta[hmm.begin]
            n_score[:c] = np.maximum(delta[:c], from_begin) + ll_no
            n_pred[:c] = np.where(delta[:c] >= from_begin, topic_ids, hmm.begin)
            inner = delta[: c + 1]  # topics and BEGIN; END never continues
            j = int(np.argmax(inner))
            n_score[hmm.end] = inner[j] + ll_no
            n_pred[hmm.end] = j
        else:
            n_score[:c] = delta[:c] + ll_no
            n_pred[:c] = topic_ids
        take_boundary = hmm.initial_mask & (b_score > n_score)
        delta = np.where(take_boundary, b_score, n_score) + unit_loglikes[i]
        back_route[i] = take_boundary
        back_pred[i] = np.where(take_boundary, b_pred, n_pred)
        if np.all(delta == -np.inf):
            raise ValidationError(f"no feasible path at unit {i}")

    finals = np.where(hmm.final_mask, delta, -np.inf)
    state = int(np.argmax(finals))
    if finals[state] == -np.inf:
        raise ValidationError("no feasible path reaches a segment-final state")

    states = [0] * n
    decisions = [False] * (n - 1)
    for i in range(n - 1, -1, -1):
        states[i] = state
        if i > 0:
            decisions[i - 1] = bool(back_route[i, state])
            state = int(back_pred[i, state])
    return SegmentationHypothesis(
        show_id=show_id,
        decisions=tuple(decisions),
        unit_states=tuple(hmm.state_label(s) for s in states),
    )


def viterbi_path_weight(hmm, unit_loglikes, boundary_loglikes=None, tsp: float | None = None) -> float:
    """Log weight of the best path (for oracle comparisons)."""
    unit_loglikes, boundary_loglikes = _check_matrices(hmm, unit_loglikes, boundary_loglikes)
    n = unit_loglikes.shape[0]
    c = hmm.n_clusters
    log_tsp = _resolve_log_tsp(hmm, tsp)
    delta = np.where(hmm.initial_mask, unit_loglikes[0], -np.inf)
    for i in range(1, n):
        ll_yes, ll_no = _boundary_terms(hmm, boundary_loglikes, i - 1)
        finals = np.where(hmm.final_mask, delta, -np.inf)
        b_score = np.max(finals) + log_tsp + ll_yes
        new = np.full(hmm.n_unit_states, -np.inf)
        topic_n = delta[:c]
        if hmm.use_begin_end:
            topic_n = np.maximum(topic_n, delta[hmm.begin])
        new[:c] = np.maximum(topic_n + ll_no, b_score)
        if hmm.use_begin_end:
            new[hmm.begin] = b_score  # BEGIN is only ever segment-initial
            inner = max(np.max(delta[:c]), delta[hmm.begin])
            new[hmm.end] = inner + ll_no  # END is never segment-initial
        delta = new + unit_loglikes[i]
    weight = float(np.max(np.where(hmm.final_mask, delta, -np.inf)))
    if weight == -np.inf:
        raise ValidationError("no feasible path")
    return weight


def _forward(hmm, unit_loglikes, boundary_loglikes, log_tsp):
    n = unit_loglikes.shape[0]
    c = hmm.n_clusters
    alpha = np.full((n, hmm.n_unit_states), -np.inf)
    alpha[0] = np.where(hmm.initial_mask, unit_loglikes[0], -np.inf)
    for i in range(1, n):
        ll_yes, ll_no = _boundary_terms(hmm, boundary_loglikes, i - 1)
        prev = alpha[i - 1]
        b_in = _logsumexp(np.where(hmm.final_mask, prev, -np.inf)) + log_tsp + ll_yes
        cur = np.full(hmm.n_unit_states, -np.inf)
        continue_topic = prev[:c] + ll_no
        if hmm.use_begin_end:
            continue_topic = np.logaddexp(continue_topic, prev[hmm.begin] + ll_no)
        cur[:c] = np.logaddexp(continue_topic, b_in)
        if hmm.use_begin_end:
            cur[hmm.begin] = b_in
            cur[hmm.end] = _logsumexp(prev[: c + 1]) + ll_no
        alpha[i] = cur + unit_loglikes[i]
    return alpha


def _backward(hmm, unit_loglikes, boundary_loglikes, log_tsp):
    n = unit_loglikes.shape[0]
    c = hmm.n_clusters
    beta = np.full((n, hmm.n_unit_states), -np.inf)
    beta[n - 1] = np.where(hmm.final_mask, 0.0, -np.inf)
    for i in range(n - 2, -1, -1):
        ll_yes, ll_no = _boundary_terms(hmm, boundary_loglikes, i)
        w = unit_loglikes[i + 1] + beta[i + 1]
        b_out = log_tsp + ll_yes + _logsumexp(np.where(hmm.initial_mask, w, -np.inf))
        cur = np.full(hmm.n_unit_states, -np.inf)
        continue_topic = w[:c]
        if hmm.use_begin_end:
            continue_topic = np.logaddexp(continue_topic, w[hmm.end])
        cur[:c] = np.logaddexp(continue_topic + ll_no, b_out)
        if hmm.use_begin_end:
            cur[hmm.begin] = np.logaddexp(_logsumexp(w[:c]), w[hmm.end]) + ll_no
            cur[hmm.end] = b_out
        beta[i] = cur
    return beta


def boundary_posteriors(
    hmm: SegmentationHmm,
    unit_loglikes,
    boundary_loglikes=None,
    tsp: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(P(yes), P(no)) per inter-unit boundary by forward-backward.

    P(yes) sums the B-pseudostate posteriors and P(no) the N-pseudostate
    posteriors; they are computed independently and sum to 1.
    """
    unit_loglikes, boundary_loglikes = _check_matrices(hmm, unit_loglikes, boundary_loglikes)
    n = unit_loglikes.shape[0]
    c = hmm.n_clusters
    log_tsp = _resolve_log_tsp(hmm, tsp)

    alpha = _forward(hmm, unit_loglikes, boundary_loglikes, log_tsp)
    beta = _backward(hmm, unit_loglikes, boundary_loglikes, log_tsp)
    total = _logsumexp(np.where(hmm.final_mask, alpha[n - 1], -np.inf))
    if total == -np.inf:
        raise ValidationError("zero total probability: no feasible path")

    p_yes = np.zeros(n - 1)
    p_no = np.zeros(n - 1)
    for i in range(n - 1):
        ll_yes, ll_no = _boundary_terms(hmm, boundary_loglikes, i)
        w = unit_loglikes[i + 1] + beta[i + 1]
        log_yes = (
            _logsumexp(np.where(hmm.final_mask, alpha[i], -np.inf))
            + log_tsp
            + ll_yes
            + _logsumexp(np.where(hmm.initial_mask, w, -np.inf))
            - total
        )
        pred_topic = alpha[i, :c]
        if hmm.use_begin_end:
            pred_topic = np.logaddexp(pred_topic, alpha[i, hmm.begin])
        log_no = _logsumexp(pred_topic + w[:c])
        if hmm.use_begin_end:
            end_part = _logsumexp(alpha[i, : c + 1]) + w[hmm.end]
            log_no = np.logaddexp(log_no, end_part)
        log_no = log_no + ll_no - total
        p_yes[i] = np.exp(log_yes)
        p_no[i] = np.exp(log_no)
    return p_yes, p_no


def prosody_only_segment(
    hmm: SegmentationHmm,
    boundary_loglikes,
    n_units: int | None = None,
    show_id: str = "",
    tsp: float | None = None,
) -> SegmentationHypothesis:
    """Decode from boundary evidence alone: unit likelihoods all uniform."""
    if boundary_loglikes is None:
        raise ValidationError("prosody-only decoding needs boundary log-likelihoods")
    boundary_loglikes = np.asarray(boundary_loglikes, dtype=float)
    n = boundary_loglikes.shape[0] + 1
    if n_units is not None and n_units != n:
        raise ValidationError(f"expected {n_units - 1} boundary rows, got {boundary_loglikes.shape[0]}")
    unit_loglikes = np.zeros((n, hmm.n_unit_states))
    return viterbi_segment(hmm, unit_loglikes, boundary_loglikes, show_id=show_id, tsp=tsp)


def with_posteriors(
    hyp: SegmentationHypothesis, hmm, unit_loglikes, boundary_loglikes=None, tsp: float | None = None
) -> SegmentationHypothesis:
    p_yes, _ = boundary_posteriors(hmm, unit_loglikes, boundary_loglikes, tsp=tsp)
    return SegmentationHypothesis(
        show_id=hyp.show_id,
        decisions=hyp.decisions,
        posteriors=tuple(float(p) for p in p_yes),
        unit_states=hyp.unit_states,
    )
