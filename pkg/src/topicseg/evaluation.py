"""Probe-based segmentation scoring.

Two positions k words (or delta seconds) apart are probed in every show; a
pair lying in different reference stories but judged same-story by the
hypothesis is a miss, and a pair lying in the same reference story but
judged different-story is a false alarm:

    p_miss = sum_s sum_i d_hyp(i, i+k) * (1 - d_ref(i, i+k))
             / sum_s sum_i (1 - d_ref(i, i+k))
    p_fa   = sum_s sum_i (1 - d_hyp(i, i+k)) * d_ref(i, i+k)
             / sum_s sum_i d_ref(i, i+k)

with d_sys(i, j) = 1 iff words i and j fall in the same story under sys.
The time variant integrates the same indicators over t in [0, T - delta].
Probe pairs never span shows. A zero denominator leaves the rate undefined
(None), which is distinct from zero; the combined cost refuses undefined
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class EvalConfig:
    k: int = 50
    delta: float = 15.0
    c_miss: float = 1.0
    c_fa: float = 1.0
    p_seg: float = 0.3

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if not self.delta > 0:
            raise ValidationError("delta must be > 0")
        if not 0 < self.p_seg < 1:
            raise ValidationError("p_seg must lie in (0, 1)")


@dataclass(frozen=True)
class WordSegmentation:
    """A show's story structure over word positions 1..n_words.

    ``boundaries`` holds inter-word indices (count of words to the left),
    each in [1, n_words - 1]; words i and j share a story iff no boundary
    lies in [i, j - 1].
    """

    show_id: str
    n_words: int
    boundaries: tuple[int, ...]

    def __post_init__(self):
        for b in self.boundaries:
            if b < 1 or b > self.n_words - 1:
                raise ValidationError(f"show {self.show_id}: word boundary {b} out of range")
        if list(self.boundaries) != sorted(set(self.boundaries)):
            raise ValidationError(f"show {self.show_id}: boundaries must be strictly increasing")


@dataclass(frozen=True)
class TimeSegmentation:
    """A show's story structure over [0, duration] seconds."""

    show_id: str
    duration: float
    boundary_times: tuple[float, ...]

    def __post_init__(self):
        for t in self.boundary_times:
            if not 0 < t < self.duration:
                raise ValidationError(f"show {self.show_id}: boundary time {t} outside (0, duration)")
        if list(self.boundary_times) != sorted(self.boundary_times):
            raise ValidationError(f"show {self.show_id}: boundary times must be increasing")


@dataclass
class RateComponents:
    miss_num: float = 0.0
    miss_den: float = 0.0
    fa_num: float = 0.0
    fa_den: float = 0.0

    def add(self, other: "RateComponents") -> None:
        self.miss_num += other.miss_num
        self.miss_den += other.miss_den
        self.fa_num += other.fa_num
        self.fa_den += other.fa_den

    def rates(self) -> tuple[float | None, float | None]:
        p_miss = self.miss_num / self.miss_den if self.miss_den > 0 else None
        p_fa = self.fa_num / self.fa_den if self.fa_den > 0 else None
        return p_miss, p_fa


@dataclass
class EvalReport:
    config: EvalConfig
    word_p_miss: float | None = None
    word_p_fa: float | None = None
    word_c_seg: float | None = None
    time_p_miss: float | None = None
    time_p_fa: float | None = None
    time_c_seg: float | None = None
    per_show_word: dict = field(default_factory=dict)
    per_show_time: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def comp(c: RateComponents) -> dict:
            return {
                "miss_num": c.miss_num,
                "miss_den": c.miss_den,
                "fa_num": c.fa_num,
                "fa_den": c.fa_den,
            }

        return {
            "word": {"p_miss": self.word_p_miss, "p_fa": self.word_p_fa, "c_seg": self.word_c_seg},
            "time": {"p_miss": self.time_p_miss, "p_fa": self.time_p_fa, "c_seg": self.time_c_seg},
            "config": {
                "k": self.config.k,
                "delta": self.config.delta,
                "c_miss": self.config.c_miss,
                "c_fa": self.config.c_fa,
                "p_seg": self.config.p_seg,
            },
            "per_show_word": {sid: comp(c) for sid, c in sorted(self.per_show_word.items())},
            "per_show_time": {sid: comp(c) for sid, c in sorted(self.per_show_time.items())},
        }


def c_seg(p_miss: float | None, p_fa: float | None, config: EvalConfig = EvalConfig()) -> float:
    """Weighted segmentation cost; refuses undefined (None) rates."""
    if p_miss is None or p_fa is None:
        raise ValidationError("c_seg undefined: a probe-rate denominator was zero")
    return config.c_miss * p_miss * config.p_seg + config.c_fa * p_fa * (1.0 - config.p_seg)


def _story_ids(n_words: int, boundaries) -> np.ndarray:
    """story index of each word position 1..n (0-based array)."""
    bounds = np.asarray(boundaries, dtype=np.int64)
    words = np.arange(1, n_words + 1)
    return np.searchsorted(bounds, words, side="left")


def _word_components(ref: WordSegmentation, hyp: WordSegmentation, k: int) -> RateComponents:
    n = ref.n_words
    comp = RateComponents()
    if n <= k:
        return comp
    ref_story = _story_ids(n, ref.boundaries)
    hyp_story = _story_ids(n, hyp.boundaries)
    ref_same = ref_story[:-k] == ref_story[k:]
    hyp_same = hyp_story[:-k] == hyp_story[k:]
    comp.miss_num = float(np.sum(hyp_same & ~ref_same))
    comp.miss_den = float(np.sum(~ref_same))
    comp.fa_num = float(np.sum(~hyp_same & ref_same))
    comp.fa_den = float(np.sum(ref_same))
    return comp


def word_based(
    ref: dict, hyp: dict, k: int = 50, per_show: dict | None = None
) -> tuple[float | None, float | None]:
    """Word-distance probe rates over a corpus.

    ``ref`` and ``hyp`` map show_id -> WordSegmentation and must cover the
    same shows with identical word counts.
    """
    if set(ref) != set(hyp):
        raise ValidationError("ref and hyp must cover identical shows")
    total = RateComponents()
    for show_id in sorted(ref):
        r, h = ref[show_id], hyp[show_id]
        if r.n_words != h.n_words:
            raise ValidationError(f"show {show_id}: ref has {r.n_words} words, hyp {h.n_words}")
        comp = _word_components(r, h, k)
        if per_show is not None:
            per_show[show_id] = comp
        total.add(comp)
    return total.rates()


def _same_story_time(bounds: np.ndarray, t1: float, t2: float) -> bool:
    # same story iff no boundary tau with t1 < tau <= t2
    return not np.any((bounds > t1) & (bounds <= t2))


def _time_components(ref: TimeSegmentation, hyp: TimeSegmentation, delta: float) -> RateComponents:
    comp = RateComponents()
    horizon = ref.duration - delta
    if horizon <= 0:
        return comp
    rb = np.asarray(ref.boundary_times, dtype=float)
    hb = np.asarray(hyp.boundary_times, dtype=float)
    cuts = {0.0, horizon}
    for tau in np.concatenate([rb, hb]):
        for point in (tau, tau - delta):
            if 0.0 < point < horizon:
                cuts.add(float(point))
    edges = sorted(cuts)
    # the integrand is constant between consecutive cut points, so the
    # integral is an exact finite sum of interval lengths
    for a, b in zip(edges, edges[1:]):
        mid = 0.5 * (a + b)
        length = b - a
        ref_same = _same_story_time(rb, mid, mid + delta)
        hyp_same = _same_story_time(hb, mid, mid + delta)
        if not ref_same:
            comp.miss_den += length
            if hyp_same:
                comp.miss_num += length
        else:
            comp.fa_den += length
            if not hyp_same:
                comp.fa_num += length
    return comp


def time_based(
    ref: dict, hyp: dict, delta: float = 15.0, per_show: dict | None = None
) -> tuple[float | None, float | None]:
    """Time-distance probe rates; integrals evaluated exactly by piecewise
    decomposition at boundary-time +/- delta cut points."""
    if set(ref) != set(hyp):
        raise ValidationError("ref and hyp must cover identical shows")
    total = RateComponents()
    for show_id in sorted(ref):
        r, h = ref[show_id], hyp[show_id]
        if abs(r.duration - h.duration) > 1e-9:
            raise ValidationError(f"show {show_id}: ref/hyp durations differ")
        comp = _time_components(r, h, delta)
        if per_show is not None:
            per_show[show_id] = comp
        total.add(comp)
    return total.rates()


def evaluate_corpus(
    word_ref: dict | None,
    word_hyp: dict | None,
    time_ref: dict | None = None,
    time_hyp: dict | None = None,
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Score a corpus on whichever of the word/time views are provided."""
    report = EvalReport(config=config)
    if word_ref is not None:
        report.word_p_miss, report.word_p_fa = word_based(
            word_ref, word_hyp, config.k, report.per_show_word
        )
        if report.word_p_miss is not None and report.word_p_fa is not None:
            report.word_c_seg = c_seg(report.word_p_miss, report.word_p_fa, config)
    if time_ref is not None:
        report.time_p_miss, report.time_p_fa = time_based(
            time_ref, time_hyp, config.delta, report.per_show_time
        )
        if report.time_p_miss is not None and report.time_p_fa is not None:
            report.time_c_seg = c_seg(report.time_p_miss, report.time_p_fa, config)
    return report
