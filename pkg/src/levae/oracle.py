"""Optimal-completion oracle for the Levenshtein distance.

Given a generated prefix and a reference sequence, computes per-action
Q-values (negated best achievable final edit distance after emitting the
action), the set of optimal next tokens, and a distribution over the
vocabulary. A brute-force enumerator over all completions provides an
independent check of the dynamic-programming shortcut.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyReference, EnumerationTooLarge
from .sequences import (
    BOS,
    EOS,
    N_RESERVED,
    PAD,
    TokenSeq,
    Vocabulary,
    levenshtein_row,
    levenshtein_row_extend,
)

NEG_INF = float("-inf")


@dataclass
class OCQueryResult:
    """Oracle answer for one (prefix, reference) state."""

    row: list[int]
    q_values: np.ndarray
    optimal_set: frozenset[int]
    pi_oc: np.ndarray

    @property
    def eos_only(self) -> bool:
        return self.optimal_set == frozenset((EOS,))


def extend_rows_all_tokens(row: Sequence[int], reference: np.ndarray, n_tokens: int) -> np.ndarray:
    """Rows for prefix+a against reference, for every content token a at once.

    Token a is indexed 0..n_tokens-1 and corresponds to id a + N_RESERVED.
    Returns an (n_tokens, len(reference)+1) int array.
    """
    r = len(reference)
    row = np.asarray(row, dtype=np.int64)
    tokens = np.arange(N_RESERVED, N_RESERVED + n_tokens, dtype=np.int64)
    neq = (reference[None, :] != tokens[:, None]).astype(np.int64)
    out = np.empty((n_tokens, r + 1), dtype=np.int64)
    out[:, 0] = row[0] + 1
    for j in range(1, r + 1):
        out[:, j] = np.minimum(
            np.minimum(row[j] + 1, out[:, j - 1] + 1),
            row[j - 1] + neq[:, j - 1],
        )
    return out


def q_values_from_row(row: Sequence[int], reference: Sequence[int], vocab: Vocabulary) -> np.ndarray:
    """Per-action Q-values given the prefix's DP row (BOS/PAD get -inf)."""
    ref = np.asarray(reference, dtype=np.int64)
    q = np.full(vocab.size, NEG_INF)
    q[EOS] = -float(row[len(reference)])
    rows = extend_rows_all_tokens(row, ref, vocab.content_size)
    q[N_RESERVED:] = -rows.min(axis=1).astype(float)
    return q


def oc_q_values(prefix: Sequence[int], reference: Sequence[int], vocab: Vocabulary) -> np.ndarray:
    """Q(a) = -(best achievable final Levenshtein distance after emitting a)."""
    if len(reference) == 0:
        raise EmptyReference("oracle reference must be nonempty")
    row = levenshtein_row(prefix, reference)
    return q_values_from_row(row, reference, vocab)


def optimal_set_from_row(row: Sequence[int], reference: Sequence[int]) -> frozenset[int]:
    """Optimal actions read directly off the DP row.

    Content token reference[j] is optimal iff row[j] equals the row minimum
    (for j < |reference|); EOS is optimal iff the final entry does.
    """
    m = min(row)
    out = {reference[j] for j in range(len(reference)) if row[j] == m}
    if row[len(reference)] == m:
        out.add(EOS)
    return frozenset(out)


def policy_from_q(q: np.ndarray, oracle_temperature: float) -> tuple[frozenset[int], np.ndarray]:
    """Distribution over actions: argmax-uniform at temperature 0, softmax(Q/T) above."""
    if oracle_temperature < 0:
        raise ValueError("oracle_temperature must be nonnegative")
    legal = np.isfinite(q)
    q_max = q[legal].max()
    optimal = frozenset(int(i) for i in np.flatnonzero(legal & (q == q_max)))
    pi = np.zeros_like(q)
    if oracle_temperature == 0.0:
        idx = sorted(optimal)
        pi[idx] = 1.0 / len(idx)
    else:
        scaled = (q[legal] - q_max) / oracle_temperature
        w = np.exp(scaled)
        pi[legal] = w / w.sum()
    return optimal, pi


def oc_policy(
    prefix: Sequence[int],
    reference: Sequence[int],
    vocab: Vocabulary,
    oracle_temperature: float = 0.0,
) -> OCQueryResult:
    """Full oracle query: DP row, Q-values, optimal set, and pi_oc."""
    if len(reference) == 0:
        raise EmptyReference("oracle reference must be nonempty")
    row = levenshtein_row(prefix, reference)
    q = q_values_from_row(row, reference, vocab)
    optimal, pi = policy_from_q(q, oracle_temperature)
    return OCQueryResult(row=row, q_values=q, optimal_set=optimal, pi_oc=pi)


def brute_force_oc(
    prefix: Sequence[int],
    reference: Sequence[int],
    vocab: Vocabulary,
    completion_length_cap: int,
    node_budget: int = 2_000_000,
) -> np.ndarray:
    """Q-values by exhaustive enumeration of every completion up to the cap.

    For each legal action a, walks the full tree of continuations of
    prefix+a (all content-token strings of length <= completion_length_cap,
    including the empty one) and takes the minimum final distance over the
    tree. Rows are advanced incrementally level by level; the min-row
    shortcut used by oc_q_values is never consulted.
    """
    if len(reference) == 0:
        raise EmptyReference("oracle reference must be nonempty")
    n_tok = vocab.content_size
    total_nodes = sum(n_tok ** d for d in range(completion_length_cap + 1))
    if total_nodes > node_budget:
        raise EnumerationTooLarge(
            f"{total_nodes} completion nodes exceed budget {node_budget}"
        )
    ref = np.asarray(reference, dtype=np.int64)
    r = len(reference)
    base = levenshtein_row(prefix, reference)
    q = np.full(vocab.size, NEG_INF)
    q[EOS] = -float(base[r])

    # Level 0: one row per action a (the empty completion).
    frontier = extend_rows_all_tokens(base, ref, n_tok)[:, None, :]  # (A, 1, r+1)
    best = frontier[:, 0, r].astype(np.int64)
    for _ in range(completion_length_cap):
        n_actions, n_leaves, _ = frontier.shape
        flat = frontier.reshape(n_actions * n_leaves, r + 1)
        children = []
        for t in range(n_tok):
            token = N_RESERVED + t
            neq = (ref != token).astype(np.int64)
            ext = np.empty_like(flat)
            ext[:, 0] = flat[:, 0] + 1
            for j in range(1, r + 1):
                ext[:, j] = np.minimum(
                    np.minimum(flat[:, j] + 1, ext[:, j - 1] + 1),
                    flat[:, j - 1] + neq[j - 1],
                )
            children.append(ext.reshape(n_actions, n_leaves, r + 1))
        frontier = np.concatenate(children, axis=1)
        best = np.minimum(best, frontier[:, :, r].min(axis=1))
    q[N_RESERVED:] = -best.astype(float)
    return q
