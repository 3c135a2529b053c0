from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fraudelements.annotation import (
    AdjudicationResult,
    Outcome,
    adjudicate,
    adjudicate_corpus,
    cohen_kappa,
    pairwise_kappa_report,
)
from fraudelements.corpus import Clause, Corpus, ElementLabel, Paragraph

import oracles

L = ElementLabel
LABEL_ST = st.sampled_from(list(ElementLabel))


class TestAdjudicate:
    def test_unanimous(self):
        result = adjudicate(L.CF, L.CF)
        assert result.outcome is Outcome.AGREED
        assert result.label is L.CF
        assert not result.used_third

    def test_majority_rule(self):
        result = adjudicate(L.CF, L.RE, L.RE)
        assert result.outcome is Outcome.RESOLVED
        assert result.label is L.RE
        assert result.used_third

    def test_no_majority_discards(self):
        result = adjudicate(L.CF, L.RE, L.FR)
        assert result.outcome is Outcome.DISCARDED
        assert result.label is None

    def test_third_required_on_disagreement(self):
        with pytest.raises(ValueError, match="third annotation required"):
            adjudicate(L.CF, L.RE)

    def test_unanimous_ignores_third(self):
        result = adjudicate(L.CF, L.CF, L.UD)
        assert result.outcome is Outcome.AGREED
        assert not result.used_third

    def test_never_invents_a_label(self):
        for a, b, third in itertools.product(ElementLabel, repeat=3):
            result = adjudicate(a, b, third)
            if result.label is not None:
                assert result.label in {a, b, third}

    def test_result_invariants_enforced(self):
        with pytest.raises(ValueError):
            AdjudicationResult(Outcome.AGREED, L.CF, used_third=True)
        with pytest.raises(ValueError):
            AdjudicationResult(Outcome.RESOLVED, L.CF, used_third=False)
        with pytest.raises(ValueError):
            AdjudicationResult(Outcome.DISCARDED, L.CF, used_third=True)


class TestCohenKappa:
    def test_perfect_agreement_with_label_variety(self):
        pairs = [(L.CF, L.CF), (L.RE, L.RE), (L.CF, L.CF)]
        assert cohen_kappa(pairs) == 1.0

    def test_hand_derived_half(self):
        pairs = [(L.CF, L.CF), (L.CF, L.RE), (L.RE, L.RE), (L.RE, L.RE)]
        assert cohen_kappa(pairs) == pytest.approx(0.5, abs=1e-12)
        assert cohen_kappa(pairs) == pytest.approx(
            oracles.kappa_sklearn(pairs), abs=1e-12)

    def test_uniform_random_near_zero(self):
        rng = np.random.default_rng(42)
        pairs = [(L(int(a)), L(int(b)))
                 for a, b in rng.integers(0, 7, size=(10000, 2))]
        assert abs(cohen_kappa(pairs)) < 0.05

    def test_matches_contingency_table_oracle_on_random_inputs(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            n = int(rng.integers(5, 60))
            pairs = [(L(int(a)), L(int(b)))
                     for a, b in rng.integers(0, 7, size=(n, 2))]
            try:
                ours = cohen_kappa(pairs)
            except ValueError:
                continue  # degenerate marginals
            assert ours == pytest.approx(oracles.kappa_sklearn(pairs),
                                         abs=1e-10)

    def test_degenerate_marginals(self):
        with pytest.raises(ValueError, match="degenerate marginals"):
            cohen_kappa([(L.CF, L.CF), (L.CF, L.CF)])

    def test_empty(self):
        with pytest.raises(ValueError):
            cohen_kappa([])

    @given(st.lists(st.tuples(LABEL_ST, LABEL_ST), min_size=2, max_size=40))
    def test_symmetry(self, pairs):
        flipped = [(b, a) for a, b in pairs]
        try:
            forward = cohen_kappa(pairs)
        except ValueError:
            with pytest.raises(ValueError):
                cohen_kappa(flipped)
            return
        assert forward == pytest.approx(cohen_kappa(flipped), abs=1e-12)
        assert -1.0 - 1e-9 <= forward <= 1.0 + 1e-9

    def test_one_iff_all_agree(self):
        agree = [(L.CF, L.CF), (L.UD, L.UD)]
        assert cohen_kappa(agree) == 1.0
        disagree = agree + [(L.CF, L.UD)]
        assert cohen_kappa(disagree) < 1.0


def corpus_with_annotations(rows):
    """rows: list of {annotator_id: label} dicts, one clause each."""
    clauses = tuple(
        Clause(text=f"c{i}",
               annotators=tuple((aid, lab) for aid, lab in row.items()))
        for i, row in enumerate(rows)
    )
    return Corpus((Paragraph("p0", clauses),))


class TestPairwiseReport:
    def test_single_pair_perfect(self):
        corpus = corpus_with_annotations([
            {"a": L.CF, "b": L.CF},
            {"a": L.RE, "b": L.RE},
        ])
        report = pairwise_kappa_report(corpus)
        assert report["mean_kappa"] == 1.0
        assert report["pairs"] == [
            {"a": "a", "b": "b", "kappa": 1.0, "n": 2}]

    def test_mean_is_unweighted(self):
        # pair (a, b) agrees perfectly; pair (a, c) hits kappa 0.5
        corpus = corpus_with_annotations([
            {"a": L.CF, "b": L.CF},
            {"a": L.RE, "b": L.RE},
            {"a": L.CF, "c": L.CF},
            {"a": L.CF, "c": L.RE},
            {"a": L.RE, "c": L.RE},
            {"a": L.RE, "c": L.RE},
        ])
        report = pairwise_kappa_report(corpus)
        by_pair = {(r["a"], r["b"]): r["kappa"] for r in report["pairs"]}
        assert by_pair[("a", "b")] == 1.0
        assert by_pair[("a", "c")] == pytest.approx(0.5)
        assert report["mean_kappa"] == pytest.approx(0.75)

    def test_kappa_decreases_with_flip_probability(self):
        rng = np.random.default_rng(99)
        kappas = []
        for q in (0.0, 0.2, 0.4, 0.6):
            rows = []
            for _ in range(4000):
                lab = L(int(rng.integers(0, 7)))
                if rng.random() < q:
                    other = L(int((int(lab) + 1 + rng.integers(0, 6)) % 7))
                    rows.append({"a": lab, "b": other})
                else:
                    rows.append({"a": lab, "b": lab})
            kappas.append(pairwise_kappa_report(
                corpus_with_annotations(rows))["mean_kappa"])
        assert all(x > y for x, y in zip(kappas, kappas[1:]))

    def test_no_shared_clauses(self):
        corpus = corpus_with_annotations([{"a": L.CF}, {"b": L.CF}])
        with pytest.raises(ValueError, match="no annotator pair"):
            pairwise_kappa_report(corpus)


class TestAdjudicateCorpus:
    def make(self):
        clauses = (
            Clause(text="agree",
                   annotators=(("a", L.CF), ("b", L.CF))),
            Clause(text="resolve",
                   annotators=(("a", L.CF), ("b", L.RE), ("c", L.RE))),
            Clause(text="discard",
                   annotators=(("a", L.CF), ("b", L.RE), ("c", L.FR))),
        )
        return Corpus((Paragraph("p0", clauses),))

    def test_outcome_counts_and_labels(self):
        out, counts = adjudicate_corpus(self.make())
        assert counts == {"agreed": 1, "resolved": 1, "discarded": 1}
        kept = out.paragraphs[0].clauses
        assert [c.gold for c in kept] == [L.CF, L.RE]

    def test_paragraph_dropped_when_all_discarded(self):
        clauses = (Clause(text="x",
                          annotators=(("a", L.CF), ("b", L.RE), ("c", L.UD))),)
        out, counts = adjudicate_corpus(Corpus((Paragraph("p0", clauses),)))
        assert len(out) == 0
        assert counts["discarded"] == 1

    def test_missing_third_on_disagreement(self):
        clauses = (Clause(text="x", annotators=(("a", L.CF), ("b", L.RE))),)
        with pytest.raises(ValueError, match="third annotation required"):
            adjudicate_corpus(Corpus((Paragraph("p0", clauses),)))

    def test_gold_passthrough_without_annotations(self):
        clauses = (Clause(text="x", gold=L.UD),)
        out, counts = adjudicate_corpus(Corpus((Paragraph("p0", clauses),)))
        assert out.paragraphs[0].clauses[0].gold is L.UD
        assert counts == {"agreed": 0, "resolved": 0, "discarded": 0}
