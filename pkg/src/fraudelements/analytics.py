"""Corpus analyses: category statistics, positional distribution over five
stages, ordinal relations between successive fraud elements, and confusion
matrices.

All statistics are computed at the character level directly from clause text,
so they are a pure function of the corpus file and independent of any trained
vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import (
    Corpus,
    ElementLabel,
    FRAUD_LABELS,
    LABELS,
    N_LABELS,
)

N_STAGES = 5


def stage_of(position: int, n: int, n_stages: int = N_STAGES) -> int:
    """Stage (1-based) of the clause at 1-based ``position`` in a paragraph
    of ``n`` clauses: the smallest s with position/n <= s/n_stages."""
    if not 1 <= position <= n:
        raise ValueError(f"position {position} outside 1..{n}")
    return -(-n_stages * position // n)


@dataclass(frozen=True)
class LabelStats:
    count: int
    proportion: float
    avg_length: float
    vocab_size: int
    novelty: float


@dataclass(frozen=True)
class CategoryStats:
    per_label: dict[ElementLabel, LabelStats]
    total_clauses: int

    def to_dict(self) -> dict:
        return {
            lab.name: {
                "count": s.count,
                "proportion": s.proportion,
                "avg_length": s.avg_length,
                "vocab_size": s.vocab_size,
                "novelty": s.novelty,
            }
            for lab, s in self.per_label.items()
        }


@dataclass(frozen=True)
class StageDistribution:
    """Per-label proportions across the five paragraph stages."""

    per_label: dict[ElementLabel, np.ndarray]

    def to_dict(self) -> dict:
        return {lab.name: vec.tolist() for lab, vec in self.per_label.items()}


@dataclass(frozen=True)
class TransitionMatrix:
    """6x6 matrix over non-NONE labels; rows are the previous element,
    columns the current one."""

    matrix: np.ndarray
    variant: str  # "original" | "balanced"

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "labels": [lab.name for lab in FRAUD_LABELS],
            "matrix": self.matrix.tolist(),
        }


def _gold_or_raise(clause, paragraph_id: str) -> ElementLabel:
    if clause.gold is None:
        raise ValueError(f"paragraph {paragraph_id!r} has an unlabeled clause")
    return clause.gold


def categorical_stats(corpus: Corpus) -> CategoryStats:
    """Count, proportion, average clause length, vocabulary size, and clause
    novelty (vocabulary size / clause count) per label."""
    counts = {lab: 0 for lab in LABELS}
    lengths = {lab: 0 for lab in LABELS}
    vocabs: dict[ElementLabel, set[str]] = {lab: set() for lab in LABELS}
    total = 0
    for p in corpus.paragraphs:
        for clause in p.clauses:
            lab = _gold_or_raise(clause, p.id)
            counts[lab] += 1
            lengths[lab] += len(clause.text)
            vocabs[lab].update(clause.text)
            total += 1
    if total == 0:
        raise ValueError("empty corpus")
    per_label = {}
    for lab in LABELS:
        c = counts[lab]
        v = len(vocabs[lab])
        per_label[lab] = LabelStats(
            count=c,
            proportion=c / total,
            avg_length=lengths[lab] / c if c else 0.0,
            vocab_size=v,
            novelty=v / c if c else 0.0,
        )
    return CategoryStats(per_label, total)


def positional_distribution(corpus: Corpus, n_stages: int = N_STAGES) -> StageDistribution:
    """Distribution of each label across equidistant paragraph stages.

    The clause at 1-based position i of an n-clause paragraph has relative
    position i/n and lands in the smallest stage s with i/n <= s/n_stages.
    """
    stage_counts = {lab: np.zeros(n_stages) for lab in LABELS}
    for p in corpus.paragraphs:
        n = len(p.clauses)
        for i, clause in enumerate(p.clauses, start=1):
            lab = _gold_or_raise(clause, p.id)
            stage_counts[lab][stage_of(i, n, n_stages) - 1] += 1
    per_label = {}
    for lab in LABELS:
        total = stage_counts[lab].sum()
        per_label[lab] = (
            stage_counts[lab] / total if total > 0 else np.zeros(n_stages)
        )
    return StageDistribution(per_label)


def ordinal_relation(corpus: Corpus, balanced: bool = False) -> TransitionMatrix:
    """Adjacency statistics of successive fraud elements.

    NONE clauses are filtered out of each paragraph first; adjacent pairs are
    then formed on the remaining sequence (never across paragraphs). The
    original variant gives, for each current element (column), the proportion
    of its adjacent parents (rows), so columns sum to 1. The balanced variant
    divides each entry by the corpus prior of the parent element over
    non-NONE clauses and renormalizes columns.
    """
    k = len(FRAUD_LABELS)
    pair_counts = np.zeros((k, k))
    prior_counts = np.zeros(k)
    n_pairs = 0
    for p in corpus.paragraphs:
        kept = []
        for clause in p.clauses:
            lab = _gold_or_raise(clause, p.id)
            if lab is not ElementLabel.NONE:
                kept.append(lab)
                prior_counts[lab] += 1
        for prev, cur in zip(kept, kept[1:]):
            pair_counts[prev, cur] += 1
            n_pairs += 1
    if n_pairs == 0:
        raise ValueError("no successional pairs")

    col_totals = pair_counts.sum(axis=0)
    original = np.divide(
        pair_counts, col_totals,
        out=np.zeros_like(pair_counts), where=col_totals > 0,
    )
    if not balanced:
        return TransitionMatrix(original, "original")

    priors = prior_counts / prior_counts.sum()
    raw = np.divide(
        original, priors[:, None],
        out=np.zeros_like(original), where=priors[:, None] > 0,
    )
    col = raw.sum(axis=0)
    matrix = np.divide(raw, col, out=np.zeros_like(raw), where=col > 0)
    return TransitionMatrix(matrix, "balanced")


def confusion_matrix(
    gold: Sequence[ElementLabel],
    pred: Sequence[ElementLabel],
) -> np.ndarray:
    """7x7 integer matrix with entry [g, p] counting gold g predicted p."""
    if len(gold) != len(pred):
        raise ValueError(
            f"length mismatch: {len(gold)} gold vs {len(pred)} predictions")
    if not gold:
        raise ValueError("empty input")
    matrix = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
    for g, p in zip(gold, pred):
        matrix[g, p] += 1
    return matrix


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

def build_report(corpus: Corpus, kappa: dict | None = None) -> dict:
    """Full analytics report as a JSON-serializable dict."""
    report = {
        "n_paragraphs": len(corpus.paragraphs),
        "n_clauses": corpus.n_clauses(),
        "categories": categorical_stats(corpus).to_dict(),
        "stage_distribution": positional_distribution(corpus).to_dict(),
        "ordinal_original": ordinal_relation(corpus, balanced=False).to_dict(),
        "ordinal_balanced": ordinal_relation(corpus, balanced=True).to_dict(),
    }
    if kappa is not None:
        report["kappa"] = kappa
    return report


def categories_table(stats: CategoryStats) -> str:
    """Tab-separated category statistics, one row per statistic."""
    header = "Statistics\t" + "\t".join(lab.name for lab in LABELS)
    rows = [
        ("# of clauses", lambda s: str(s.count)),
        ("Proportion", lambda s: f"{100 * s.proportion:.2f}%"),
        ("Avg. length of clauses", lambda s: f"{s.avg_length:.1f}"),
        ("Vocabulary size", lambda s: str(s.vocab_size)),
        ("Clause novelty", lambda s: f"{s.novelty:.3f}"),
    ]
    lines = [header]
    for name, fmt in rows:
        lines.append(name + "\t" + "\t".join(
            fmt(stats.per_label[lab]) for lab in LABELS))
    return "\n".join(lines) + "\n"


def stages_table(dist: StageDistribution) -> str:
    """Tab-separated stage proportions, one row per label."""
    header = "Label\t" + "\t".join(f"stage{s}" for s in range(1, N_STAGES + 1))
    lines = [header]
    for lab in LABELS:
        vec = dist.per_label[lab]
        lines.append(lab.name + "\t" + "\t".join(f"{v:.4f}" for v in vec))
    return "\n".join(lines) + "\n"


def transition_table(tm: TransitionMatrix) -> str:
    """Tab-separated transition matrix, rows previous, columns current."""
    header = "prev\\cur\t" + "\t".join(lab.name for lab in FRAUD_LABELS)
    lines = [header]
    for i, lab in enumerate(FRAUD_LABELS):
        lines.append(lab.name + "\t" + "\t".join(
            f"{v:.4f}" for v in tm.matrix[i]))
    return "\n".join(lines) + "\n"
