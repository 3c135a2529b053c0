from __future__ import annotations

import numpy as np
import pytest

from fraudelements.analytics import (
    build_report,
    categorical_stats,
    categories_table,
    confusion_matrix,
    ordinal_relation,
    positional_distribution,
    stage_of,
    stages_table,
    transition_table,
)
from fraudelements.corpus import (
    Clause,
    Corpus,
    ElementLabel,
    FRAUD_LABELS,
    LABELS,
    Paragraph,
)

from conftest import labeled_corpus, labeled_paragraph

L = ElementLabel


class TestStageRule:
    def test_single_clause_lands_in_final_stage(self):
        assert stage_of(1, 1) == 5

    def test_five_clauses_hit_each_stage_once(self):
        assert [stage_of(i, 5) for i in range(1, 6)] == [1, 2, 3, 4, 5]

    def test_relative_position_point_three(self):
        assert stage_of(3, 10) == 2

    def test_boundaries_are_right_closed(self):
        assert stage_of(2, 10) == 1   # r = 0.2 -> stage 1
        assert stage_of(4, 10) == 2   # r = 0.4 -> stage 2
        assert stage_of(5, 10) == 3   # r = 0.5 -> stage 3

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            stage_of(0, 4)
        with pytest.raises(ValueError):
            stage_of(5, 4)


class TestCategoricalStats:
    def test_single_clause_corpus(self):
        corpus = Corpus((Paragraph("p", (Clause(text="ab", gold=L.UD),)),))
        stats = categorical_stats(corpus)
        ud = stats.per_label[L.UD]
        assert ud.count == 1
        assert ud.proportion == 1.0
        assert ud.avg_length == 2.0
        assert ud.vocab_size == 2
        assert ud.novelty == 2.0

    def test_reference_ratios(self):
        # the published ratios the statistics definitions must reproduce
        assert round(12646 / 39207, 3) == 0.323
        assert round(100 * 39207 / 197878, 2) == 19.81

    def test_proportions_sum_to_one_and_novelty_identity(self, rng):
        corpus = labeled_corpus([
            [L(int(x)) for x in rng.integers(0, 7, size=rng.integers(1, 6))]
            for _ in range(40)
        ])
        stats = categorical_stats(corpus)
        total = sum(s.proportion for s in stats.per_label.values())
        assert total == pytest.approx(1.0, abs=1e-9)
        for s in stats.per_label.values():
            if s.count:
                assert s.novelty * s.count == s.vocab_size
            else:
                assert s.novelty == 0.0 and s.vocab_size == 0

    def test_vocab_counts_distinct_characters(self):
        corpus = Corpus((Paragraph("p", (
            Clause(text="aab", gold=L.CF),
            Clause(text="ba", gold=L.CF),
            Clause(text="xy", gold=L.RE),
        )),))
        stats = categorical_stats(corpus)
        assert stats.per_label[L.CF].vocab_size == 2
        assert stats.per_label[L.CF].avg_length == 2.5
        assert stats.per_label[L.RE].vocab_size == 2

    def test_unlabeled_clause_rejected(self):
        corpus = Corpus((Paragraph("p", (Clause(text="ab"),)),))
        with pytest.raises(ValueError, match="unlabeled"):
            categorical_stats(corpus)


class TestPositionalDistribution:
    def test_rows_sum_to_one_when_label_occurs(self, rng):
        corpus = labeled_corpus([
            [L(int(x)) for x in rng.integers(0, 7, size=rng.integers(1, 9))]
            for _ in range(60)
        ])
        dist = positional_distribution(corpus)
        stats = categorical_stats(corpus)
        for lab in LABELS:
            if stats.per_label[lab].count:
                assert dist.per_label[lab].sum() == pytest.approx(1.0, abs=1e-9)
            else:
                assert dist.per_label[lab].sum() == 0.0

    def test_five_clause_paragraph_spreads_evenly(self):
        corpus = labeled_corpus([[L.CF] * 5])
        dist = positional_distribution(corpus)
        assert np.allclose(dist.per_label[L.CF], [0.2] * 5)

    def test_paragraph_permutation_invariance(self, rng):
        lists = [
            [L(int(x)) for x in rng.integers(0, 7, size=rng.integers(1, 7))]
            for _ in range(30)
        ]
        a = labeled_corpus(lists)
        b = labeled_corpus(list(reversed(lists)))
        # re-id paragraphs so only the order differs
        for lab in LABELS:
            assert np.allclose(
                positional_distribution(a).per_label[lab],
                positional_distribution(b).per_label[lab])
        sa = categorical_stats(a).per_label
        sb = categorical_stats(b).per_label
        assert all(sa[lab] == sb[lab] for lab in LABELS)
        assert np.allclose(ordinal_relation(a).matrix,
                           ordinal_relation(b).matrix)


class TestOrdinalRelation:
    def test_filtering_and_single_parent_column(self):
        corpus = labeled_corpus([[L.CF, L.NONE, L.CF, L.FR]])
        tm = ordinal_relation(corpus)
        # filtered sequence [CF, CF, FR]: pairs (CF->CF), (CF->FR)
        assert tm.matrix[L.CF, L.FR] == 1.0
        assert tm.matrix[L.CF, L.CF] == 1.0
        assert tm.variant == "original"

    def test_columns_sum_to_one(self, rng):
        corpus = labeled_corpus([
            [L(int(x)) for x in rng.integers(0, 7, size=6)]
            for _ in range(50)
        ])
        tm = ordinal_relation(corpus)
        sums = tm.matrix.sum(axis=0)
        for lab in FRAUD_LABELS:
            if sums[lab] > 0:
                assert sums[lab] == pytest.approx(1.0, abs=1e-9)

    def test_balanced_is_identity_under_uniform_priors(self):
        # every non-NONE label appears the same number of times
        cycle = list(FRAUD_LABELS)
        corpus = labeled_corpus([cycle, list(reversed(cycle)), cycle])
        original = ordinal_relation(corpus, balanced=False)
        balanced = ordinal_relation(corpus, balanced=True)
        assert np.allclose(original.matrix, balanced.matrix, atol=1e-9)
        assert balanced.variant == "balanced"

    def test_balanced_divides_by_parent_prior(self):
        # CF twice as frequent as FR; balancing must upweight FR as a parent
        corpus = labeled_corpus([
            [L.CF, L.RE], [L.CF, L.RE], [L.FR, L.RE], [L.CF, L.CF]])
        original = ordinal_relation(corpus, balanced=False).matrix
        balanced = ordinal_relation(corpus, balanced=True).matrix
        assert (balanced[L.FR, L.RE] / balanced[L.CF, L.RE]
                > original[L.FR, L.RE] / original[L.CF, L.RE])

    def test_pairs_do_not_cross_paragraphs(self):
        corpus = labeled_corpus([[L.CF, L.NONE], [L.FR, L.NONE]])
        with pytest.raises(ValueError, match="no successional pairs"):
            ordinal_relation(corpus)

    def test_none_only_corpus(self):
        corpus = labeled_corpus([[L.NONE, L.NONE, L.NONE]])
        with pytest.raises(ValueError, match="no successional pairs"):
            ordinal_relation(corpus)


class TestConfusionMatrix:
    def test_perfect_predictions_are_diagonal(self):
        gold = [L.CF, L.RE, L.NONE, L.CF]
        m = confusion_matrix(gold, gold)
        assert m.sum() == 4
        assert np.trace(m) == 4

    def test_single_off_diagonal_cell(self):
        gold = [L.CF] * 5
        pred = [L.NONE] * 5
        m = confusion_matrix(gold, pred)
        assert m[L.CF, L.NONE] == 5
        assert m.sum() == 5

    def test_row_sums_equal_gold_counts(self, rng):
        gold = [L(int(x)) for x in rng.integers(0, 7, size=1000)]
        pred = [L(int(x)) for x in rng.integers(0, 7, size=1000)]
        m = confusion_matrix(gold, pred)
        for lab in LABELS:
            assert m[lab].sum() == sum(1 for g in gold if g == lab)
        accuracy = np.trace(m) / m.sum()
        assert accuracy == pytest.approx(
            sum(1 for g, p in zip(gold, pred) if g == p) / 1000)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            confusion_matrix([L.CF], [L.CF, L.RE])

    def test_empty(self):
        with pytest.raises(ValueError):
            confusion_matrix([], [])


class TestReport:
    def test_report_structure_and_tables(self, rng):
        corpus = labeled_corpus([
            [L(int(x)) for x in rng.integers(0, 7, size=5)]
            for _ in range(20)
        ])
        report = build_report(corpus)
        assert set(report) == {
            "n_paragraphs", "n_clauses", "categories", "stage_distribution",
            "ordinal_original", "ordinal_balanced"}
        assert set(report["categories"]) == {lab.name for lab in LABELS}
        stats = categorical_stats(corpus)
        table = categories_table(stats)
        assert table.startswith("Statistics\tCF\tIF\tRE\tCP\tFR\tUD\tNONE")
        assert len(table.strip().split("\n")) == 6
        stages = stages_table(positional_distribution(corpus))
        assert len(stages.strip().split("\n")) == 8
        trans = transition_table(ordinal_relation(corpus))
        assert len(trans.strip().split("\n")) == 7
