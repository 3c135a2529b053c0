"""Corpus data model for clause-level complaint text.

A complaint paragraph is an ordered sequence of clauses obtained by splitting
on Chinese clause punctuation; each clause optionally carries a gold fraud
element label and per-annotator labels. Corpora are immutable after
construction and serialize to one-JSON-object-per-line files.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Clause delimiters: full/half-width comma, full/half-width semicolon,
# ideographic space, ASCII space.
CLAUSE_DELIMITERS = "，,；;　 "
_SPLIT_RE = re.compile("[" + re.escape(CLAUSE_DELIMITERS) + "]")

MAX_CLAUSE_TOKENS = 128
MAX_PARAGRAPH_CLAUSES = 64

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


class ElementLabel(IntEnum):
    """The seven fraud element categories a clause can be labeled with."""

    CF = 0    # content fabrication
    IF = 1    # identity fabrication
    RE = 2    # remittance excuse
    CP = 3    # contact platform
    FR = 4    # fraud realization
    UD = 5    # user demand
    NONE = 6  # non-fraudulent statement

    @classmethod
    def from_name(cls, name: str) -> "ElementLabel":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown element label {name!r}") from None


LABELS: tuple[ElementLabel, ...] = tuple(ElementLabel)
N_LABELS = len(LABELS)
FRAUD_LABELS: tuple[ElementLabel, ...] = LABELS[:-1]  # everything but NONE


class CorpusFormatError(ValueError):
    """Raised for malformed corpus records; names the offending line and field."""

    def __init__(self, line: int, field: str, message: str):
        super().__init__(f"line {line}, field {field!r}: {message}")
        self.line = line
        self.field = field


@dataclass(frozen=True)
class Clause:
    """One clause: raw text, optional token ids, optional labels."""

    text: str
    tokens: tuple[int, ...] | None = None
    gold: ElementLabel | None = None
    annotators: tuple[tuple[str, ElementLabel], ...] | None = None


@dataclass(frozen=True)
class Paragraph:
    """An identified, ordered sequence of at least one clause."""

    id: str
    clauses: tuple[Clause, ...]

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        if len(self.clauses) < 1:
            raise ValueError(f"paragraph {self.id!r} has no clauses")

    def __len__(self) -> int:
        return len(self.clauses)


class Vocabulary:
    """Bijection between token strings and ids, with reserved pad/unk slots."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != UNK_TOKEN:
            raise ValueError(
                f"vocabulary must start with {PAD_TOKEN!r}, {UNK_TOKEN!r}")
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            index[tok] = i
        self.tokens = tokens
        self._index = index

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass(frozen=True)
class Corpus:
    """A list of paragraphs plus the vocabulary their tokens resolve in."""

    paragraphs: tuple[Paragraph, ...]
    vocabulary: Vocabulary | None = None

    def __post_init__(self):
        object.__setattr__(self, "paragraphs", tuple(self.paragraphs))
        seen: set[str] = set()
        for p in self.paragraphs:
            if p.id in seen:
                raise ValueError(f"duplicate paragraph id {p.id!r}")
            seen.add(p.id)

    def __len__(self) -> int:
        return len(self.paragraphs)

    def clauses(self) -> Iterable[Clause]:
        for p in self.paragraphs:
            yield from p.clauses

    def n_clauses(self) -> int:
        return sum(len(p) for p in self.paragraphs)


# ---------------------------------------------------------------------------
# segmentation and tokenization
# ---------------------------------------------------------------------------

def segment_paragraph(text: str) -> list[str]:
    """Split a paragraph into clause strings at clause punctuation.

    Delimiters are discarded, pieces stripped, empty pieces dropped. Empty or
    delimiter-only input yields an empty list.
    """
    pieces = _SPLIT_RE.split(text)
    return [p.strip() for p in pieces if p.strip()]


def tokenize_clause(text: str, vocabulary: Vocabulary) -> tuple[int, ...]:
    """Character-level tokenization: one token id per unicode code point."""
    return tuple(vocabulary.id_of(ch) for ch in text)


def build_vocabulary(texts: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Build a character vocabulary from clause texts, most frequent first.

    Line breaks cannot round-trip through the one-token-per-line vocabulary
    file, so they are never added and fall back to the unknown id.
    """
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(text)
    chars = [
        (ch, n) for ch, n in counts.items()
        if n >= min_freq and ch not in ("\n", "\r")
    ]
    chars.sort(key=lambda item: (-item[1], item[0]))
    return Vocabulary([PAD_TOKEN, UNK_TOKEN] + [ch for ch, _ in chars])


def tokenize_corpus(corpus: Corpus, vocabulary: Vocabulary) -> Corpus:
    """Return a copy with token ids filled in for every clause.

    Clauses are truncated to ``MAX_CLAUSE_TOKENS`` tokens and paragraphs to
    ``MAX_PARAGRAPH_CLAUSES`` clauses.
    """
    paragraphs = []
    for p in corpus.paragraphs:
        clauses = []
        for c in p.clauses[:MAX_PARAGRAPH_CLAUSES]:
            tokens = tokenize_clause(c.text, vocabulary)[:MAX_CLAUSE_TOKENS]
            clauses.append(replace(c, tokens=tokens))
        paragraphs.append(Paragraph(p.id, tuple(clauses)))
    return Corpus(tuple(paragraphs), vocabulary)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_corpus(
    corpus: Corpus,
    ratios: tuple[int, int, int] = (8, 1, 1),
    seed: int = 0,
) -> tuple[Corpus, Corpus, Corpus]:
    """Shuffle paragraphs with a seeded permutation and partition them.

    Sizes are ``floor(N * r_i / sum(ratios))`` for the first two parts; the
    remainder goes to the third, so (8, 1, 1) on 41103 paragraphs gives
    (32882, 4110, 4111).
    """
    if any(r <= 0 for r in ratios):
        raise ValueError("split ratios must be positive")
    n = len(corpus.paragraphs)
    if n < 3:
        raise ValueError("corpus too small to split")
    order = np.random.default_rng(seed).permutation(n)
    total = sum(ratios)
    n_train = n * ratios[0] // total
    n_valid = n * ratios[1] // total
    shuffled = [corpus.paragraphs[i] for i in order]
    vocab = corpus.vocabulary
    return (
        Corpus(tuple(shuffled[:n_train]), vocab),
        Corpus(tuple(shuffled[n_train:n_train + n_valid]), vocab),
        Corpus(tuple(shuffled[n_train + n_valid:]), vocab),
    )


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

def _clause_to_json(c: Clause) -> dict:
    return {
        "text": c.text,
        "gold": c.gold.name if c.gold is not None else None,
        "annotators": (
            [[aid, lab.name] for aid, lab in c.annotators]
            if c.annotators is not None else None
        ),
    }


def write_corpus(corpus: Corpus, path) -> None:
    """Write one JSON record per paragraph, UTF-8, stable field order."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus.paragraphs:
            record = {
                "id": p.id,
                "clauses": [_clause_to_json(c) for c in p.clauses],
            }
            fh.write(json.dumps(record, ensure_ascii=False,
                                separators=(",", ":")))
            fh.write("\n")


def _parse_label(value, line: int, field: str) -> ElementLabel | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise CorpusFormatError(line, field, f"expected string, got {value!r}")
    try:
        return ElementLabel.from_name(value)
    except ValueError as exc:
        raise CorpusFormatError(line, field, str(exc)) from None


def _parse_clause(obj, line: int, index: int) -> Clause:
    field = f"clauses[{index}]"
    if not isinstance(obj, dict):
        raise CorpusFormatError(line, field, "clause must be an object")
    if "text" not in obj:
        raise CorpusFormatError(line, f"{field}.text", "missing")
    text = obj["text"]
    if not isinstance(text, str):
        raise CorpusFormatError(line, f"{field}.text", "must be a string")
    gold = _parse_label(obj.get("gold"), line, f"{field}.gold")
    annotators = None
    raw = obj.get("annotators")
    if raw is not None:
        if not isinstance(raw, list):
            raise CorpusFormatError(line, f"{field}.annotators", "must be a list")
        pairs = []
        for j, pair in enumerate(raw):
            if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                    or not isinstance(pair[0], str)):
                raise CorpusFormatError(
                    line, f"{field}.annotators[{j}]",
                    "expected [annotator_id, label]")
            lab = _parse_label(pair[1], line, f"{field}.annotators[{j}]")
            if lab is None:
                raise CorpusFormatError(
                    line, f"{field}.annotators[{j}]", "label may not be null")
            pairs.append((pair[0], lab))
        annotators = tuple(pairs)
    return Clause(text=text, gold=gold, annotators=annotators)


def read_corpus(path) -> Corpus:
    """Parse a corpus file; malformed records raise :class:`CorpusFormatError`."""
    paragraphs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(line_no, "<record>",
                                        f"invalid JSON: {exc.msg}") from None
            if not isinstance(record, dict):
                raise CorpusFormatError(line_no, "<record>", "must be an object")
            if "id" not in record or not isinstance(record["id"], str):
                raise CorpusFormatError(line_no, "id", "missing or not a string")
            if "clauses" not in record:
                raise CorpusFormatError(line_no, "clauses", "missing")
            if not isinstance(record["clauses"], list) or not record["clauses"]:
                raise CorpusFormatError(line_no, "clauses",
                                        "must be a non-empty list")
            clauses = tuple(
                _parse_clause(obj, line_no, i)
                for i, obj in enumerate(record["clauses"])
            )
            try:
                paragraphs.append(Paragraph(record["id"], clauses))
            except ValueError as exc:
                raise CorpusFormatError(line_no, "id", str(exc)) from None
    try:
        return Corpus(tuple(paragraphs))
    except ValueError as exc:
        raise CorpusFormatError(0, "id", str(exc)) from None
