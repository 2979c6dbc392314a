"""Optimal-completion oracle: figure cases, brute-force agreement, properties."""
import itertools

import numpy as np
import pytest

from levae.errors import EmptyReference, EnumerationTooLarge
from levae.oracle import (
    brute_force_oc,
    oc_policy,
    oc_q_values,
    optimal_set_from_row,
    policy_from_q,
)
from levae.sequences import EOS, Vocabulary, levenshtein, levenshtein_row

from conftest import all_sequences


def optimal_set(q):
    legal = np.isfinite(q)
    return frozenset(int(i) for i in np.flatnonzero(legal & (q == q[legal].max())))


def brute_force_itertools(prefix, reference, vocab, cap):
    """From-scratch enumeration rescoring every completion with levenshtein()."""
    q = np.full(vocab.size, -np.inf)
    q[EOS] = -levenshtein(prefix, reference)
    for a in vocab.content_ids():
        best = None
        for l in range(cap + 1):
            for comp in itertools.product(list(vocab.content_ids()), repeat=l):
                d = levenshtein(prefix + (a,) + comp, reference)
                best = d if best is None else min(best, d)
        q[a] = -best
    return q


class TestFigure:
    def test_paper_figure_sets(self, figure_vocab):
        v = figure_vocab
        target = v.encode("this pizza is very good".split())
        generated = v.encode("the risotto is very good".split())
        expected = [
            {"this"},
            {"this", "pizza"},
            {"this", "pizza", "is"},
            {"very"},
            {"good"},
            {"</s>"},
        ]
        for t, want in enumerate(expected):
            res = oc_policy(generated[:t], target, v)
            got = {"</s>" if i == EOS else v.token_of(i) for i in res.optimal_set}
            assert got == want, f"prefix length {t}"

    def test_point_mass_on_very(self, figure_vocab):
        v = figure_vocab
        target = v.encode("this pizza is very good".split())
        prefix = v.encode("the risotto is".split())
        res = oc_policy(prefix, target, v)
        assert res.optimal_set == frozenset({v.id_of("very")})
        assert res.pi_oc[v.id_of("very")] == 1.0
        assert res.pi_oc.sum() == pytest.approx(1.0, abs=1e-12)


class TestPolicy:
    def test_uniform_over_two(self, vocab3):
        q = np.full(vocab3.size, -np.inf)
        q[3] = q[4] = -1.0
        q[EOS] = -2.0
        optimal, pi = policy_from_q(q, 0.0)
        assert optimal == frozenset({3, 4})
        assert pi[3] == pi[4] == 0.5

    def test_high_temperature_limit(self, vocab3):
        ref = (3, 4)
        res = oc_policy((), ref, vocab3, oracle_temperature=1e9)
        legal = np.isfinite(res.q_values)
        np.testing.assert_allclose(res.pi_oc[legal], 1.0 / legal.sum(), atol=1e-8)
        assert res.pi_oc[~legal].sum() == 0.0

    def test_temperature_softmax(self, vocab3):
        ref = (3, 4, 5)
        res = oc_policy((4,), ref, vocab3, oracle_temperature=0.7)
        q = res.q_values
        legal = np.isfinite(q)
        expect = np.exp((q[legal] - q[legal].max()) / 0.7)
        expect /= expect.sum()
        np.testing.assert_allclose(res.pi_oc[legal], expect, atol=1e-12)

    def test_empty_reference(self, vocab3):
        with pytest.raises(EmptyReference):
            oc_policy((), (), vocab3)
        with pytest.raises(EmptyReference):
            oc_q_values((3,), (), vocab3)


class TestBruteForce:
    def test_matches_itertools_spotchecks(self, vocab2):
        rng = np.random.default_rng(3)
        ids = list(vocab2.content_ids())
        for _ in range(6):
            prefix = tuple(rng.choice(ids, size=rng.integers(0, 3)))
            ref = tuple(rng.choice(ids, size=rng.integers(1, 4)))
            cap = len(ref) + 1
            got = brute_force_oc(prefix, ref, vocab2, cap)
            want = brute_force_itertools(prefix, ref, vocab2, cap)
            np.testing.assert_array_equal(got, want)

    def test_prefix_equals_reference(self, vocab3):
        ref = (3, 5, 4)
        q = brute_force_oc(ref, ref, vocab3, completion_length_cap=4)
        assert q[EOS] == 0.0
        assert EOS in optimal_set(q)

    def test_single_token_reference(self, vocab3):
        q = brute_force_oc((), (4,), vocab3, completion_length_cap=3)
        assert optimal_set(q) == frozenset({4})

    def test_figure_vocab_agreement(self, figure_vocab):
        v = figure_vocab
        ref = v.encode("this pizza is very good".split())
        prefix = v.encode(["the"])
        bf = brute_force_oc(prefix, ref, v, completion_length_cap=6)
        dp = oc_q_values(prefix, ref, v)
        np.testing.assert_array_equal(bf, dp)

    def test_budget_guard(self, vocab3):
        with pytest.raises(EnumerationTooLarge):
            brute_force_oc((), (3,), vocab3, completion_length_cap=10, node_budget=100)

    def test_exhaustive_small_sweep(self, vocab2):
        ids = list(vocab2.content_ids())
        for prefix in all_sequences(ids, 3):
            for ref in all_sequences(ids, 3):
                if not ref:
                    continue
                bf = brute_force_oc(prefix, ref, vocab2, len(ref) + 2)
                dp = oc_q_values(prefix, ref, vocab2)
                np.testing.assert_array_equal(bf, dp)


class TestProperties:
    def test_greedy_rollout_reconstructs(self, vocab3):
        ids = list(vocab3.content_ids())
        for ref in all_sequences(ids, 4):
            if not ref:
                continue
            prefix = ()
            for _ in range(10):
                res = oc_policy(prefix, ref, vocab3)
                tok = min(res.optimal_set)
                if tok == EOS:
                    break
                prefix = prefix + (tok,)
            assert prefix == ref
            assert levenshtein(prefix, ref) == 0

    def test_min_row_monotone(self, vocab3):
        rng = np.random.default_rng(5)
        ids = list(vocab3.content_ids())
        for _ in range(100):
            ref = tuple(rng.choice(ids, size=rng.integers(1, 5)))
            prefix = tuple(rng.choice(ids, size=rng.integers(0, 5)))
            row = levenshtein_row(prefix, ref)
            res = oc_policy(prefix, ref, vocab3)
            q = res.q_values
            q_max = q[np.isfinite(q)].max()
            for a in ids:
                new_row = levenshtein_row(prefix + (a,), ref)
                if a in res.optimal_set:
                    assert min(new_row) == min(row)
                elif q[a] < q_max:
                    assert min(new_row) == min(row) + 1

    def test_characterizations_agree(self, vocab3):
        rng = np.random.default_rng(6)
        ids = list(vocab3.content_ids())
        for _ in range(200):
            ref = tuple(rng.choice(ids, size=rng.integers(1, 6)))
            prefix = tuple(rng.choice(ids, size=rng.integers(0, 6)))
            row = levenshtein_row(prefix, ref)
            res = oc_policy(prefix, ref, vocab3)
            assert res.optimal_set == optimal_set_from_row(row, ref)

    def test_eos_membership_rule(self, vocab3):
        rng = np.random.default_rng(7)
        ids = list(vocab3.content_ids())
        for _ in range(100):
            ref = tuple(rng.choice(ids, size=rng.integers(1, 5)))
            prefix = tuple(rng.choice(ids, size=rng.integers(0, 5)))
            res = oc_policy(prefix, ref, vocab3)
            row = res.row
            assert (EOS in res.optimal_set) == (row[len(ref)] == min(row))
