"""Edit-distance kernels against the recursive textbook oracle and metric axioms."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levae.errors import UnequalLength
from levae.sequences import (
    BOS,
    EOS,
    PAD,
    Vocabulary,
    hamming,
    levenshtein,
    levenshtein_row,
    levenshtein_row_extend,
    validate_sequence,
)

from conftest import levenshtein_recursive

seqs = st.lists(st.integers(3, 6), max_size=6).map(tuple)


class TestLevenshtein:
    def test_identical(self):
        assert levenshtein((3, 4, 5), (3, 4, 5)) == 0

    def test_insertions_only(self):
        assert levenshtein((), (3, 4, 5)) == 3
        assert levenshtein((3, 4, 5), ()) == 3

    def test_kitten_sitting(self):
        # k i t t e n / s i t t i n g mapped to ids
        toks = {c: i + 3 for i, c in enumerate("kitensg")}
        a = tuple(toks[c] for c in "kitten")
        b = tuple(toks[c] for c in "sitting")
        assert levenshtein_recursive(a, b) == 3
        assert levenshtein(a, b) == 3

    @given(a=seqs, b=seqs)
    @settings(max_examples=200)
    def test_matches_recursive_oracle(self, a, b):
        assert levenshtein(a, b) == levenshtein_recursive(a, b)

    @given(a=seqs, b=seqs, c=seqs)
    @settings(max_examples=200)
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, b) == levenshtein(b, a)
        assert (levenshtein(a, b) == 0) == (a == b)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)

    @given(a=seqs, b=seqs)
    @settings(max_examples=200)
    def test_bounds(self, a, b):
        d = levenshtein(a, b)
        assert abs(len(a) - len(b)) <= d <= max(len(a), len(b), 0)


class TestRow:
    def test_empty_prefix(self):
        assert levenshtein_row((), (3, 4, 5)) == [0, 1, 2, 3]

    def test_figure_prefix(self, figure_vocab):
        ref = figure_vocab.encode("this pizza is very good".split())
        prefix = figure_vocab.encode(["the"])
        row = levenshtein_row(prefix, ref)
        assert row == [1, 1, 2, 3, 4, 5]
        # cell-by-cell recomputation with the recursive oracle
        assert row == [levenshtein_recursive(prefix, ref[:j]) for j in range(len(ref) + 1)]

    def test_prefix_equals_reference(self):
        ref = (3, 4, 3)
        assert levenshtein_row(ref, ref)[-1] == 0

    def test_extend_basic(self):
        ref = (3, 4)  # [this, pizza] analogue
        assert levenshtein_row_extend([0, 1, 2], 3, ref) == [1, 0, 1]

    @given(prefix=seqs, ref=seqs, token=st.integers(3, 6))
    @settings(max_examples=200)
    def test_extend_entry0_and_equivalence(self, prefix, ref, token):
        row = levenshtein_row(prefix, ref)
        ext = levenshtein_row_extend(row, token, ref)
        assert ext[0] == row[0] + 1
        assert ext == levenshtein_row(prefix + (token,), ref)

    @given(prefix=seqs, ref=seqs)
    @settings(max_examples=200)
    def test_row_properties(self, prefix, ref):
        row = levenshtein_row(prefix, ref)
        assert row[len(ref)] == levenshtein(prefix, ref)
        assert row[0] == len(prefix)
        for a, b in zip(row, row[1:]):
            assert abs(a - b) <= 1


class TestHamming:
    def test_identical(self):
        assert hamming((3, 4), (3, 4)) == 0

    def test_all_differ(self):
        assert hamming((3, 4), (4, 3)) == 2

    def test_one_mismatch(self):
        assert hamming((3, 4, 3), (3, 3, 3)) == 1

    def test_unequal_length(self):
        with pytest.raises(UnequalLength):
            hamming((3,), (3, 4))

    def test_matches_positionwise_sum(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = tuple(rng.integers(3, 7, size=5))
            b = tuple(rng.integers(3, 7, size=5))
            assert hamming(a, b) == sum(x != y for x, y in zip(a, b))


class TestVocabulary:
    def test_reserved_ids(self, vocab3):
        assert (BOS, EOS, PAD) == (0, 1, 2)
        assert vocab3.tokens[:3] == ("<s>", "</s>", "<pad>")
        assert vocab3.size == 6
        assert vocab3.content_size == 3

    def test_round_trip(self, vocab3):
        ids = vocab3.encode(["a", "c", "b"])
        assert vocab3.decode(ids) == ["a", "c", "b"]

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(["a", "a"])

    def test_validate_sequence(self, vocab3):
        assert validate_sequence([3, 4], vocab3) == (3, 4)
        with pytest.raises(ValueError):
            validate_sequence([0, 3], vocab3)
        with pytest.raises(ValueError):
            validate_sequence([99], vocab3)

    def test_content_hash_changes(self, vocab3, vocab2):
        assert vocab3.content_hash() != vocab2.content_hash()
