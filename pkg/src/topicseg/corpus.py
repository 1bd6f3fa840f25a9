"""Data model and on-disk formats for transcripts, stories, and boundary features.

File formats (all UTF-8, one record per line):

Transcript::

    #SHOW <show_id> <source_type>
    <start> <end> <word> [speaker] [gender]      # one token per line
    #TOPIC <index>                               # reference topic boundary

A ``#TOPIC`` index counts tokens to its left, so valid indices lie in
``[1, n_tokens - 1]``; a boundary sits strictly between two tokens.

Feature table: tab-separated with a header row ``show_id  boundary_index
<feature...>  [label]``. An empty cell means the feature is missing for that
boundary (missing is distinct from zero). ``boundary_index`` counts chop
units to the left of the candidate boundary.

Story file: ``<story_id> TAB <whitespace-separated words>``.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

GENDERS = ("M", "F", "unknown")
LABELS = ("topic", "nontopic")

# Feature names that are validated specially regardless of schema.
PAUSE_FEATURE = "PAU_DUR"


@dataclass(frozen=True)
class Token:
    text: str
    start_time: float
    end_time: float
    speaker_id: str | None = None
    gender: str | None = None


@dataclass(frozen=True)
class Show:
    """A time-aligned word stream with optional reference topic boundaries."""

    show_id: str
    source_type: str
    tokens: tuple[Token, ...]
    ref_topic_boundaries: frozenset[int] = frozenset()
    duration: float = 0.0

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def sorted_boundaries(self) -> list[int]:
        return sorted(self.ref_topic_boundaries)


@dataclass(frozen=True)
class Story:
    story_id: str
    word_counts: Counter
    total_words: int


@dataclass(frozen=True)
class BoundaryFeatureVector:
    """Named features observed at one candidate boundary.

    ``features`` holds only present values; a name absent from the map is
    MISSING. Values are floats for numeric features and strings for
    categorical ones.
    """

    show_id: str
    boundary_index: int
    features: dict = field(default_factory=dict)
    label: str | None = None

    def key(self) -> tuple[str, int]:
        return (self.show_id, self.boundary_index)


@dataclass(frozen=True)
class FeatureSchema:
    """Declares each feature's kind: 'numeric' or 'categorical'.

    An open schema accepts unknown feature names (their kind is inferred);
    a closed one rejects them.
    """

    kinds: dict
    open: bool = True

    def kind_of(self, name: str) -> str | None:
        return self.kinds.get(name)


def validate_show(show: Show) -> Show:
    """Check all Show/Token invariants, raising ValidationError on the first hit."""
    n = len(show.tokens)
    if n == 0:
        raise ValidationError(f"show {show.show_id}: empty token stream")
    per_speaker_last_end: dict = {}
    prev_start = -math.inf
    for ordinal, tok in enumerate(show.tokens):
        if not math.isfinite(tok.start_time) or not math.isfinite(tok.end_time):
            raise ValidationError(f"show {show.show_id}: token {ordinal}: non-finite time")
        if tok.start_time < 0:
            raise ValidationError(f"show {show.show_id}: token {ordinal}: negative start_time")
        if tok.end_time < tok.start_time:
            raise ValidationError(
                f"show {show.show_id}: token {ordinal}: end_time {tok.end_time} < start_time {tok.start_time}"
            )
        if tok.start_time < prev_start:
            raise ValidationError(f"show {show.show_id}: token {ordinal}: tokens not sorted by start_time")
        prev_start = tok.start_time
        if tok.gender is not None and tok.gender not in GENDERS:
            raise ValidationError(f"show {show.show_id}: token {ordinal}: bad gender {tok.gender!r}")
        last_end = per_speaker_last_end.get(tok.speaker_id)
        if last_end is not None and tok.start_time < last_end - 1e-9:
            raise ValidationError(
                f"show {show.show_id}: token {ordinal}: overlaps previous token of speaker {tok.speaker_id!r}"
            )
        per_speaker_last_end[tok.speaker_id] = tok.end_time
    prev = 0
    for b in show.sorted_boundaries():
        if b < 1 or b > n - 1:
            raise ValidationError(f"show {show.show_id}: boundary at stream edge or out of range: {b}")
        if b == prev:
            raise ValidationError(f"show {show.show_id}: duplicate boundary index {b}")
        prev = b
    return show


def load_shows(path: str, transcript_format: str = "tokens") -> list[Show]:
    """Parse a transcript file into validated Shows.

    ``transcript_format`` selects the record layout; only "tokens" (the
    format documented in the module docstring) is defined.
    """
    if transcript_format != "tokens":
        raise ValueError(f"unknown transcript format {transcript_format!r}")
    shows: list[Show] = []
    cur_id = None
    cur_source = None
    tokens: list[Token] = []
    boundaries: set[int] = set()

    def flush(line_no):
        if cur_id is None:
            return
        if not tokens:
            raise ParseError(f"show {cur_id} has no tokens", path, line_no)
        show = Show(
            show_id=cur_id,
            source_type=cur_source,
            tokens=tuple(tokens),
            ref_topic_boundaries=frozenset(boundaries),
            duration=tokens[-1].end_time,
        )
        shows.append(validate_show(show))

    with open(path, encoding="utf-8") as fh:
        line_no = 0
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("##"):
                continue
            parts = line.split()
            if parts[0] == "#SHOW":
                flush(line_no)
                if len(parts) != 3:
                    raise ParseError("expected '#SHOW <id> <source_type>'", path, line_no)
                cur_id, cur_source = parts[1], parts[2]
                tokens, boundaries = [], set()
            elif parts[0] == "#TOPIC":
                if cur_id is None:
                    raise ParseError("#TOPIC before any #SHOW", path, line_no)
                try:
                    idx = int(parts[1])
                except (IndexError, ValueError):
                    raise ParseError("expected '#TOPIC <index>'", path, line_no) from None
                if idx == 0:
                    raise ParseError("boundary at stream edge", path, line_no)
                boundaries.add(idx)
            else:
                if cur_id is None:
                    raise ParseError("token line before any #SHOW", path, line_no)
                if len(parts) < 3 or len(parts) > 5:
                    raise ParseError("expected '<start> <end> <word> [speaker] [gender]'", path, line_no)
                try:
                    start, end = float(parts[0]), float(parts[1])
                except ValueError:
                    raise ParseError(f"bad token times {parts[0]!r} {parts[1]!r}", path, line_no) from None
                speaker = parts[3] if len(parts) >= 4 else None
                gender = parts[4] if len(parts) == 5 else None
                tokens.append(Token(parts[2], start, end, speaker, gender))
        flush(line_no)
    return shows


def serialize_shows(shows: list[Show]) -> str:
    """Canonical text form of Shows; load(serialize(x)) reproduces x."""
    lines = []
    for show in shows:
        lines.append(f"#SHOW {show.show_id} {show.source_type}")
        for tok in show.tokens:
            parts = [repr(tok.start_time), repr(tok.end_time), tok.text]
            if tok.speaker_id is not None:
                parts.append(tok.speaker_id)
                if tok.gender is not None:
                    parts.append(tok.gender)
            elif tok.gender is not None:
                raise ValidationError(f"show {show.show_id}: gender without speaker is not representable")
            lines.append(" ".join(parts))
        for b in show.sorted_boundaries():
            lines.append(f"#TOPIC {b}")
    return "\n".join(lines) + "\n"


def save_shows(shows: list[Show], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_shows(shows))


def _parse_cell(name: str, cell: str, kind: str, path, line_no) -> object:
    if kind == "numeric":
        try:
            value = float(cell)
        except ValueError:
            raise ParseError(f"non-numeric value {cell!r} in numeric column {name}", path, line_no) from None
        if not math.isfinite(value):
            raise ParseError(f"non-finite value in numeric column {name}", path, line_no)
        return value
    return cell


def _looks_numeric(cell: str) -> bool:
    try:
        return math.isfinite(float(cell))
    except ValueError:
        return False


def load_feature_table(path: str, schema: FeatureSchema | None = None) -> list[BoundaryFeatureVector]:
    """Load boundary feature vectors from a tab-separated table.

    With no declared schema, column kinds are inferred: a column whose
    non-empty cells all parse as finite floats is numeric, otherwise
    categorical. A closed schema rejects undeclared feature columns.
    """
    with open(path, encoding="utf-8") as fh:
        rows = [line.rstrip("\n") for line in fh]
    if not rows:
        raise ParseError("empty feature table", path, 1)
    header = rows[0].split("\t")
    if header[:2] != ["show_id", "boundary_index"]:
        raise ParseError("header must start with 'show_id\\tboundary_index'", path, 1)
    names = header[2:]
    has_label = bool(names) and names[-1] == "label"
    if has_label:
        names = names[:-1]
    if len(set(names)) != len(names):
        raise ParseError("duplicate feature column", path, 1)

    if schema is not None:
        for name in names:
            if schema.kind_of(name) is None and not schema.open:
                raise ParseError(f"unknown feature {name!r} for closed schema", path, 1)

    parsed: list[tuple[int, list[str]]] = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        cells = row.split("\t")
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(cells)}", path, line_no)
        parsed.append((line_no, cells))

    kinds = {}
    for col, name in enumerate(names, start=2):
        declared = schema.kind_of(name) if schema is not None else None
        if declared is not None:
            kinds[name] = declared
        else:
            cells = [c[col] for _, c in parsed if c[col] != ""]
            kinds[name] = "numeric" if cells and all(_looks_numeric(c) for c in cells) else "categorical"
    if PAUSE_FEATURE in kinds:
        kinds[PAUSE_FEATURE] = "numeric"

    seen: dict[tuple[str, int], int] = {}
    vectors = []
    for line_no, cells in parsed:
        show_id = cells[0]
        try:
            boundary_index = int(cells[1])
        except ValueError:
            raise ParseError(f"bad boundary_index {cells[1]!r}", path, line_no) from None
        key = (show_id, boundary_index)
        if key in seen:
            raise ParseError(
                f"duplicate key {key}: lines {seen[key]} and {line_no}", path, line_no
            )
        seen[key] = line_no
        features = {}
        for col, name in enumerate(names, start=2):
            cell = cells[col]
            if cell == "":
                continue
            value = _parse_cell(name, cell, kinds[name], path, line_no)
            if name == PAUSE_FEATURE and value < 0:
                raise ParseError("negative pause duration", path, line_no)
            features[name] = value
        label = None
        if has_label:
            cell = cells[-1]
            if cell != "":
                if cell not in LABELS:
                    raise ParseError(f"bad label {cell!r} (want topic|nontopic)", path, line_no)
                label = cell
        vectors.append(BoundaryFeatureVector(show_id, boundary_index, features, label))
    return vectors


def infer_schema(vectors: list[BoundaryFeatureVector]) -> FeatureSchema:
    kinds: dict = {}
    for vec in vectors:
        for name, value in vec.features.items():
            kind = "numeric" if isinstance(value, (int, float)) else "categorical"
            prev = kinds.get(name)
            if prev is None:
                kinds[name] = kind
            elif prev != kind:
                raise ValidationError(f"feature {name} mixes numeric and categorical values")
    return FeatureSchema(kinds=kinds, open=True)


def serialize_feature_table(vectors: list[BoundaryFeatureVector]) -> str:
    names = sorted({name for vec in vectors for name in vec.features})
    has_label = any(vec.label is not None for vec in vectors)
    header = ["show_id", "boundary_index"] + names + (["label"] if has_label else [])
    lines = ["\t".join(header)]
    for vec in sorted(vectors, key=lambda v: v.key()):
        cells = [vec.show_id, str(vec.boundary_index)]
        for name in names:
            value = vec.features.get(name)
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append(repr(value))
            else:
                cells.append(str(value))
        if has_label:
            cells.append(vec.label or "")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def save_feature_table(vectors: list[BoundaryFeatureVector], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_feature_table(vectors))


def join_features(
    candidate_keys: list[tuple[str, int]], vectors: list[BoundaryFeatureVector]
) -> tuple[dict, list[tuple[str, int]]]:
    """Join feature vectors against candidate boundaries.

    Returns (map key -> vector for covered candidates, list of uncovered
    candidate keys). Vectors whose key is not a candidate are ignored.
    """
    by_key = {vec.key(): vec for vec in vectors}
    covered = {}
    uncovered = []
    for key in candidate_keys:
        vec = by_key.get(key)
        if vec is None:
            uncovered.append(key)
        else:
            covered[key] = vec
    return covered, uncovered


def read_story_file(path: str) -> list[Story]:
    stories = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError("expected '<story_id> TAB <words...>'", path, line_no)
            story_id, text = line.split("\t", 1)
            words = text.split()
            stories.append(Story(story_id, Counter(words), len(words)))
    return stories


def filter_stories(stories: list[Story], min_words: int, max_words: int) -> tuple[list[Story], int]:
    kept = [s for s in stories if min_words <= s.total_words <= max_words]
    return kept, len(stories) - len(kept)


def load_stories(path: str, min_words: int = 300, max_words: int = 3000) -> list[Story]:
    """Load stories, dropping those outside [min_words, max_words] total words."""
    if min_words >= max_words:
        raise ValueError(f"min_words {min_words} must be < max_words {max_words}")
    stories = read_story_file(path)
    kept, dropped = filter_stories(stories, min_words, max_words)
    if dropped:
        log.info("dropped %d of %d stories outside [%d, %d] words", dropped, len(stories), min_words, max_words)
    if not kept:
        raise ValidationError("no training stories after length filtering")
    return kept


def serialize_stories(stories: list[Story]) -> str:
    lines = []
    for story in stories:
        words = []
        for word in sorted(story.word_counts):
            words.extend([word] * story.word_counts[word])
        lines.append(f"{story.story_id}\t{' '.join(words)}")
    return "\n".join(lines) + "\n"


def save_stories(stories: list[Story], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_stories(stories))


def with_boundaries(show: Show, boundaries) -> Show:
    return replace(show, ref_topic_boundaries=frozenset(boundaries))
