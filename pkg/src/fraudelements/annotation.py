"""Adjudication of multi-annotator labels and inter-annotator agreement."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Sequence

from .corpus import Clause, Corpus, ElementLabel, Paragraph


class Outcome(Enum):
    AGREED = "agreed"
    RESOLVED = "resolved"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class AdjudicationResult:
    outcome: Outcome
    label: ElementLabel | None
    used_third: bool

    def __post_init__(self):
        if self.outcome is Outcome.AGREED and self.used_third:
            raise ValueError("agreed outcome cannot use a third annotator")
        if self.outcome is Outcome.RESOLVED and not self.used_third:
            raise ValueError("resolved outcome requires a third annotator")
        if self.outcome is Outcome.DISCARDED and self.label is not None:
            raise ValueError("discarded outcome carries no label")


def adjudicate(
    a: ElementLabel,
    b: ElementLabel,
    third: ElementLabel | None = None,
) -> AdjudicationResult:
    """Resolve two annotations by majority, consulting a third on disagreement.

    Unanimous pairs are accepted directly. When the first two disagree, the
    third annotation decides if it matches either; otherwise the instance is
    discarded.
    """
    if a == b:
        return AdjudicationResult(Outcome.AGREED, a, used_third=False)
    if third is None:
        raise ValueError("third annotation required")
    if third == a or third == b:
        return AdjudicationResult(Outcome.RESOLVED, third, used_third=True)
    return AdjudicationResult(Outcome.DISCARDED, None, used_third=True)


def cohen_kappa(pairs: Sequence[tuple[ElementLabel, ElementLabel]]) -> float:
    """Cohen's kappa for one annotator pair.

    kappa = (p_o - p_e) / (1 - p_e), where p_o is the observed agreement rate
    and p_e the chance agreement from the two annotators' marginal label
    frequencies.
    """
    if not pairs:
        raise ValueError("kappa requires at least one pair")
    n = len(pairs)
    observed = sum(1 for a, b in pairs if a == b) / n
    left = Counter(a for a, _ in pairs)
    right = Counter(b for _, b in pairs)
    expected = sum(
        (left[k] / n) * (right[k] / n) for k in ElementLabel
    )
    if expected >= 1.0 - 1e-12:
        raise ValueError("kappa undefined: degenerate marginals")
    return (observed - expected) / (1.0 - expected)


def pairwise_kappa_report(corpus: Corpus) -> dict:
    """Kappa per unordered annotator pair over clauses both labeled.

    Returns ``{"pairs": [{"a", "b", "kappa", "n"}, ...], "mean_kappa"}`` with
    pairs sorted by annotator ids and the unweighted mean across pairs.
    Pairs whose kappa is undefined (degenerate marginals, typically a pair
    sharing a handful of identically labeled clauses) carry no agreement
    information and are left out of the report.
    """
    shared: dict[tuple[str, str], list[tuple[ElementLabel, ElementLabel]]]
    shared = defaultdict(list)
    for clause in corpus.clauses():
        if not clause.annotators:
            continue
        by_id = dict(clause.annotators)
        for aid, bid in combinations(sorted(by_id), 2):
            shared[(aid, bid)].append((by_id[aid], by_id[bid]))
    if not shared:
        raise ValueError("no annotator pair shares any clause")
    rows = []
    for (aid, bid) in sorted(shared):
        pairs = shared[(aid, bid)]
        try:
            kappa = cohen_kappa(pairs)
        except ValueError:
            continue
        rows.append({"a": aid, "b": bid, "kappa": kappa, "n": len(pairs)})
    if not rows:
        raise ValueError("kappa undefined for every annotator pair")
    mean = sum(r["kappa"] for r in rows) / len(rows)
    return {"pairs": rows, "mean_kappa": mean}


def adjudicate_corpus(corpus: Corpus) -> tuple[Corpus, dict]:
    """Fill gold labels from annotator labels by majority rule.

    The first two annotators on each clause form the primary pair; the third,
    when present, adjudicates disagreements. Discarded clauses are dropped,
    as are paragraphs left empty. Clauses without annotator labels must
    already carry a gold label. Returns the adjudicated corpus and counts of
    each outcome.
    """
    counts = {"agreed": 0, "resolved": 0, "discarded": 0}
    paragraphs = []
    for p in corpus.paragraphs:
        kept: list[Clause] = []
        for clause in p.clauses:
            if not clause.annotators:
                if clause.gold is None:
                    raise ValueError(
                        f"paragraph {p.id!r}: clause has neither annotator "
                        "labels nor a gold label")
                kept.append(clause)
                continue
            if len(clause.annotators) < 2:
                raise ValueError(
                    f"paragraph {p.id!r}: adjudication needs at least two "
                    "annotators")
            a, b = clause.annotators[0][1], clause.annotators[1][1]
            third = clause.annotators[2][1] if len(clause.annotators) > 2 else None
            result = adjudicate(a, b, third)
            counts[result.outcome.value] += 1
            if result.outcome is not Outcome.DISCARDED:
                kept.append(Clause(
                    text=clause.text,
                    tokens=clause.tokens,
                    gold=result.label,
                    annotators=clause.annotators,
                ))
        if kept:
            paragraphs.append(Paragraph(p.id, tuple(kept)))
    return Corpus(tuple(paragraphs), corpus.vocabulary), counts
