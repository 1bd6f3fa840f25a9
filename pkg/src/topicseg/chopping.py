"""Partition token streams into pseudosentence units ("chopping").

Only inter-unit positions are candidate topic boundaries downstream, so the
chopping criterion bounds achievable recall: a reference boundary falling
strictly inside a unit can never be hypothesized.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import Show
from .errors import ParseError, ValidationError

FIXED = "FIXED"
TURN = "TURN"
PAUSE = "PAUSE"
SENTENCE = "SENTENCE"
CRITERIA = (FIXED, TURN, PAUSE, SENTENCE)

SENTENCE_END_CHARS = (".", "!", "?")


@dataclass(frozen=True)
class ChopCriterion:
    kind: str
    block_length: int = 10
    pause_threshold: float = 0.575

    def __post_init__(self):
        if self.kind not in CRITERIA:
            raise ValidationError(f"unknown chop criterion {self.kind!r}")
        if self.kind == FIXED and self.block_length < 1:
            raise ValidationError("block_length must be >= 1")
        if self.kind == PAUSE and not self.pause_threshold > 0:
            raise ValidationError("pause_threshold must be > 0")


@dataclass(frozen=True)
class ChopUnit:
    show_id: str
    unit_index: int
    first: int  # first token index, inclusive
    last: int  # last token index, inclusive
    pause_after: float  # gap to next unit; 0 at show end
    turn_change_after: bool

    @property
    def n_tokens(self) -> int:
        return self.last - self.first + 1


def _gap_after(show: Show, token_index: int) -> float:
    return max(0.0, show.tokens[token_index + 1].start_time - show.tokens[token_index].end_time)


def _break_positions(show: Show, criterion: ChopCriterion) -> list[int]:
    """Inter-token indices (count of tokens to the left) where units break."""
    n = len(show.tokens)
    breaks = []
    if criterion.kind == FIXED:
        breaks = list(range(criterion.block_length, n, criterion.block_length))
    elif criterion.kind == TURN:
        for i in range(n - 1):
            if show.tokens[i].speaker_id != show.tokens[i + 1].speaker_id:
                breaks.append(i + 1)
    elif criterion.kind == PAUSE:
        for i in range(n - 1):
            if _gap_after(show, i) > criterion.pause_threshold:
                breaks.append(i + 1)
    elif criterion.kind == SENTENCE:
        if not any(tok.text.endswith(SENTENCE_END_CHARS) for tok in show.tokens):
            raise ValidationError(f"show {show.show_id}: SENTENCE chopping needs sentence-end markers")
        for i in range(n - 1):
            if show.tokens[i].text.endswith(SENTENCE_END_CHARS):
                breaks.append(i + 1)
    return breaks


def chop(show: Show, criterion: ChopCriterion) -> list[ChopUnit]:
    """Tile the show's tokens into contiguous units under the criterion."""
    if len(show.tokens) == 0:
        raise ValidationError(f"show {show.show_id}: cannot chop an empty show")
    breaks = _break_positions(show, criterion)
    edges = [0] + breaks + [len(show.tokens)]
    units = []
    for u in range(len(edges) - 1):
        first, last = edges[u], edges[u + 1] - 1
        at_end = last == len(show.tokens) - 1
        pause = 0.0 if at_end else _gap_after(show, last)
        turn = (not at_end) and show.tokens[last].speaker_id != show.tokens[last + 1].speaker_id
        units.append(ChopUnit(show.show_id, u, first, last, pause, turn))
    return units


def project_boundaries(show: Show, units: list[ChopUnit]) -> tuple[list[bool], list[int]]:
    """Label each inter-unit boundary against the reference.

    Returns (labels, unreachable): labels[i] is True iff a reference topic
    boundary coincides with the break after unit i; unreachable lists
    reference token indices that fall strictly inside a unit (they bound
    oracle recall and are reported, not silently dropped).
    """
    if not units or units[0].first != 0 or units[-1].last != show.n_tokens - 1:
        raise ValidationError(f"show {show.show_id}: units do not tile the token stream")
    for a, b in zip(units, units[1:]):
        if b.first != a.last + 1:
            raise ValidationError(f"show {show.show_id}: units do not tile the token stream")
    break_set = {u.last + 1 for u in units[:-1]}
    labels = []
    refs = show.ref_topic_boundaries
    for u in units[:-1]:
        labels.append((u.last + 1) in refs)
    unreachable = sorted(b for b in refs if b not in break_set)
    return labels, unreachable


def boundary_token_index(units: list[ChopUnit], boundary_index: int) -> int:
    """Token index of inter-unit boundary b (between unit b-1 and unit b)."""
    if boundary_index < 1 or boundary_index > len(units) - 1:
        raise ValidationError(f"boundary index {boundary_index} out of range")
    return units[boundary_index - 1].last + 1


def boundary_time(show: Show, units: list[ChopUnit], boundary_index: int) -> float:
    """Timestamp of an inter-unit boundary: midpoint of the enclosing pause."""
    t = boundary_token_index(units, boundary_index)
    return 0.5 * (show.tokens[t - 1].end_time + show.tokens[t].start_time)


UNITS_HEADER = ["show_id", "unit_index", "first", "last", "pause_after", "turn_change_after", "ref_label"]


def serialize_units(units_by_show: dict, labels_by_show: dict | None = None) -> str:
    lines = ["\t".join(UNITS_HEADER)]
    for show_id in sorted(units_by_show):
        units = units_by_show[show_id]
        labels = labels_by_show.get(show_id) if labels_by_show else None
        for u in units:
            if labels is not None and u.unit_index < len(labels):
                ref = "topic" if labels[u.unit_index] else "nontopic"
            else:
                ref = ""
            lines.append(
                "\t".join(
                    [
                        u.show_id,
                        str(u.unit_index),
                        str(u.first),
                        str(u.last),
                        repr(u.pause_after),
                        "true" if u.turn_change_after else "false",
                        ref,
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def load_units(path: str) -> tuple[dict, dict]:
    """Read a units TSV back into ({show_id: [ChopUnit]}, {show_id: [ref labels]})."""
    units_by_show: dict = {}
    labels_by_show: dict = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != UNITS_HEADER:
            raise ParseError(f"bad units header {header}", path, 1)
        for line_no, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            cells = raw.rstrip("\n").split("\t")
            if len(cells) != len(UNITS_HEADER):
                raise ParseError(f"expected {len(UNITS_HEADER)} columns", path, line_no)
            show_id, unit_index, first, last, pause, turn, ref = cells
            unit = ChopUnit(show_id, int(unit_index), int(first), int(last), float(pause), turn == "true")
            units_by_show.setdefault(show_id, []).append(unit)
            if ref:
                labels_by_show.setdefault(show_id, []).append(ref == "topic")
    return units_by_show, labels_by_show
