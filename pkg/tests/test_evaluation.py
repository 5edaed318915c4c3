"""Evaluation tests: morpheme identification (MI), boundary identification
(MBI), BPC bookkeeping, and canonical-to-surface gold projection.

The worked fixture: word "sesihambe", gold se-si-hamb-e, predicted
se-si-hambe. Counting by hand gives MI P=2/3 R=1/2 and, on the cut sets
({2,4} predicted vs {2,4,8} gold), MBI P=1 R=2/3 F1=0.8.
"""

import math

import numpy as np
import pytest

from subseg import evaluation
from subseg.errors import DataError
from subseg.evaluation import (
    GoldAnalysis,
    avg_segment_length,
    bpc,
    canonical_to_surface,
    cuts_of,
    mbi_scores,
    mi_scores,
    read_canonical_gold,
    read_gold,
    read_predictions,
)

GOLD = GoldAnalysis("sesihambe", ("se", "si", "hamb", "e"))
PRED = ["se", "si", "hambe"]


class TestGoldAnalysis:
    def test_cuts_are_internal_boundaries(self):
        assert GOLD.cuts() == frozenset({2, 4, 8})

    def test_single_morph_has_no_cuts(self):
        assert GoldAnalysis("walk", ("walk",)).cuts() == frozenset()

    def test_morphs_must_concatenate(self):
        with pytest.raises(DataError):
            GoldAnalysis("walked", ("walk", "s"))

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            GoldAnalysis("walked", ())

    def test_cuts_of_pieces(self):
        assert cuts_of(("ab", "cd", "efgh", "ij")) == frozenset({2, 4, 8})
        assert cuts_of(("word",)) == frozenset()


class TestMorphemeIdentification:
    """Multiset overlap of predicted subwords and gold morphs."""

    def test_worked_fixture(self):
        s = mi_scores([PRED], [GOLD])
        assert (s.tp, s.fp, s.fn) == (2, 1, 2)
        np.testing.assert_allclose(s.precision, 2 / 3)
        np.testing.assert_allclose(s.recall, 1 / 2)
        np.testing.assert_allclose(s.f1, 4 / 7)

    def test_perfect_prediction(self):
        s = mi_scores([list(GOLD.morphs)], [GOLD])
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)

    def test_multiset_counts_duplicates(self):
        gold = GoldAnalysis("aaaa", ("aa", "aa"))
        s = mi_scores([["aa", "a", "a"]], [gold])
        # only one predicted "aa" can match each gold "aa"
        assert (s.tp, s.fp, s.fn) == (1, 2, 1)

    def test_disjoint_prediction_scores_zero(self):
        s = mi_scores([["ses", "ihambe"]], [GOLD])
        assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)

    def test_micro_pools_counts(self):
        gold = [GoldAnalysis("ab", ("ab",)), GoldAnalysis("cd", ("cd",))]
        pred = [["a", "b"], ["cd"]]
        s = mi_scores(pred, gold, average="micro")
        assert (s.tp, s.fp, s.fn) == (1, 2, 1)
        np.testing.assert_allclose(s.precision, 1 / 3)
        np.testing.assert_allclose(s.recall, 1 / 2)

    def test_macro_averages_per_word(self):
        gold = [GoldAnalysis("ab", ("ab",)), GoldAnalysis("cd", ("cd",))]
        pred = [["a", "b"], ["cd"]]
        s = mi_scores(pred, gold, average="macro")
        np.testing.assert_allclose(s.precision, 0.5)
        np.testing.assert_allclose(s.recall, 0.5)
        np.testing.assert_allclose(s.f1, 0.5)

    def test_unknown_average_rejected(self):
        with pytest.raises(DataError):
            mi_scores([PRED], [GOLD], average="harmonic")


class TestBoundaryIdentification:
    """Cut-set overlap: predicted {2,4} against gold {2,4,8}."""

    def test_worked_fixture(self):
        s = mbi_scores([PRED], [GOLD])
        assert (s.tp, s.fp, s.fn) == (2, 0, 1)
        assert s.precision == 1.0
        np.testing.assert_allclose(s.recall, 2 / 3)
        np.testing.assert_allclose(s.f1, 0.8)

    def test_perfect_prediction(self):
        s = mbi_scores([list(GOLD.morphs)], [GOLD])
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)

    def test_no_cuts_anywhere_scores_zero(self):
        gold = [GoldAnalysis("ab", ("ab",))]
        s = mbi_scores([["ab"]], gold)
        assert (s.tp, s.fp, s.fn) == (0, 0, 0)
        assert s.f1 == 0.0

    def test_over_segmentation_costs_precision(self):
        gold = [GoldAnalysis("abcd", ("ab", "cd"))]
        s = mbi_scores([["a", "b", "c", "d"]], gold)
        assert (s.tp, s.fp, s.fn) == (1, 2, 0)

    def test_micro_vs_macro(self):
        gold = [
            GoldAnalysis("abcd", ("ab", "cd")),
            GoldAnalysis("ef", ("e", "f")),
        ]
        pred = [["ab", "cd"], ["ef"]]
        micro = mbi_scores(pred, gold, average="micro")
        macro = mbi_scores(pred, gold, average="macro")
        np.testing.assert_allclose(micro.recall, 1 / 2)
        np.testing.assert_allclose(macro.recall, 1 / 2)
        np.testing.assert_allclose(micro.precision, 1.0)
        # macro: word 2 has a predictionless empty cut set, scoring 0
        np.testing.assert_allclose(macro.precision, 0.5)


class TestAlignmentChecks:
    def test_length_mismatch_rejected(self):
        with pytest.raises(DataError):
            mi_scores([PRED, PRED], [GOLD])

    def test_word_mismatch_rejected(self):
        with pytest.raises(DataError):
            mbi_scores([["se", "si"]], [GOLD])

    def test_non_alphabetic_words_skipped(self):
        gold = [GOLD, GoldAnalysis("7", ("7",))]
        pred = [PRED, ["7"]]
        s = mi_scores(pred, gold)
        assert (s.tp, s.fp, s.fn) == (2, 1, 2)  # the digit contributes nothing

    def test_empty_after_filtering(self):
        gold = [GoldAnalysis("7", ("7",))]
        s = mbi_scores([["7"]], gold)
        assert s.f1 == 0.0


class TestAvgSegmentLength:
    def test_chars_over_segments(self):
        pred = [["ab"], ["c", "d"]]
        np.testing.assert_allclose(avg_segment_length(pred), 4 / 3)

    def test_non_alpha_words_ignored(self):
        assert avg_segment_length([["ab"], ["7"]]) == 2.0

    def test_no_alpha_words_rejected(self):
        with pytest.raises(DataError):
            avg_segment_length([["7"], ["."]])


class TestBpc:
    def test_uniform_one_bit_per_char(self):
        corpus = ["ab", "cd"]  # power-of-two char count keeps the identity exact
        assert bpc(lambda x: -len(x) * math.log(2.0), corpus) == 1.0

    def test_char_count_is_the_denominator(self):
        corpus = ["aaaa"]
        np.testing.assert_allclose(
            bpc(lambda x: -8 * math.log(2.0), corpus), 2.0
        )

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            bpc(lambda x: 0.0, [])


class TestCanonicalProjection:
    """Canonical morph boundaries travel through a minimal-edit alignment."""

    def test_identity_when_surface_equals_canonical(self):
        g = canonical_to_surface("walked", ("walk", "ed"))
        assert g.morphs == ("walk", "ed")

    def test_deleted_char_shifts_boundary(self):
        # canonical ab+ba surfaces as "aba": the double b degemminates
        g = canonical_to_surface("aba", ("ab", "ba"))
        assert g.morphs == ("ab", "a")

    def test_inserted_char_joins_following_segment(self):
        g = canonical_to_surface("abxcd", ("ab", "cd"))
        assert g.morphs == ("ab", "xcd")

    def test_vanished_morph_collapses_boundaries(self):
        g = canonical_to_surface("ac", ("a", "b", "c"))
        assert g.morphs == ("a", "c")

    def test_boundary_at_word_edge_disappears(self):
        g = canonical_to_surface("ab", ("ab", "c"))
        assert g.morphs == ("ab",)

    def test_result_is_a_valid_surface_analysis(self):
        g = canonical_to_surface("intombazana", ("in", "tombazane",))
        assert "".join(g.morphs) == "intombazana"

    def test_empty_morphs_rejected(self):
        with pytest.raises(DataError):
            canonical_to_surface("ab", ())


class TestReaders:
    def test_read_gold(self, tmp_path):
        path = tmp_path / "gold.tsv"
        path.write_text("sesihambe\tse-si-hamb-e\n\nwalk\twalk\n", encoding="utf-8")
        gold = read_gold(path)
        assert [g.morphs for g in gold] == [("se", "si", "hamb", "e"), ("walk",)]

    def test_read_gold_rejects_bad_concatenation(self, tmp_path):
        path = tmp_path / "gold.tsv"
        path.write_text("walked\twalk-s\n", encoding="utf-8")
        with pytest.raises(DataError) as err:
            read_gold(path)
        assert "gold.tsv:1" in str(err.value)

    def test_read_gold_rejects_malformed_line(self, tmp_path):
        path = tmp_path / "gold.tsv"
        path.write_text("justaword\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_gold(path)

    def test_read_canonical_projects(self, tmp_path):
        path = tmp_path / "canon.tsv"
        path.write_text("aba\tab-ba\n", encoding="utf-8")
        gold = read_canonical_gold(path)
        assert gold[0].morphs == ("ab", "a")

    def test_read_canonical_drops_heavy_substitution(self, tmp_path):
        path = tmp_path / "canon.tsv"
        path.write_text("xyz\ta-bc\n", encoding="utf-8")
        assert read_canonical_gold(path, max_sub_fraction=0.5) == []
        kept = read_canonical_gold(path, max_sub_fraction=None)
        assert kept[0].morphs == ("x", "yz")

    def test_read_predictions(self, tmp_path):
        path = tmp_path / "pred.txt"
        path.write_text("se-si-hambe\nwalk\n\n", encoding="utf-8")
        assert read_predictions(path) == [["se", "si", "hambe"], ["walk"]]
