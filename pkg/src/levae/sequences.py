"""Token sequences, vocabulary, and edit-distance kernels.

Sequences are plain tuples of integer token ids holding content tokens only:
BOS is an implicit left context and EOS an implicit terminator, neither is
ever stored inside a sequence. All distances operate on these content ids.
"""
from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

from .errors import UnequalLength

BOS = 0
EOS = 1
PAD = 2
N_RESERVED = 3
RESERVED_TOKENS = ("<s>", "</s>", "<pad>")

TokenSeq = tuple[int, ...]


class Vocabulary:
    """Token/id mapping with reserved BOS=0, EOS=1, PAD=2 up front."""

    def __init__(self, content_tokens: Iterable[str]):
        content = list(content_tokens)
        self.tokens: tuple[str, ...] = RESERVED_TOKENS + tuple(content)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def content_size(self) -> int:
        return self.size - N_RESERVED

    def content_ids(self) -> range:
        return range(N_RESERVED, self.size)

    def id_of(self, token: str) -> int:
        return self._ids[token]

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, words: Sequence[str]) -> TokenSeq:
        return tuple(self._ids[w] for w in words)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def content_hash(self) -> str:
        h = hashlib.sha256("\x00".join(self.tokens).encode("utf-8"))
        return h.hexdigest()

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocabulary(size={self.size}, content={self.content_size})"


def validate_sequence(seq: Sequence[int], vocab: Vocabulary) -> TokenSeq:
    """Check that seq holds valid content ids only and return it as a tuple."""
    out = tuple(int(i) for i in seq)
    for i in out:
        if i < N_RESERVED or i >= vocab.size:
            raise ValueError(f"token id {i} is reserved or out of range for {vocab}")
    return out


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    """Unit-cost insert/delete/substitute edit distance."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        append = cur.append
        for j, cb in enumerate(b, 1):
            append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def levenshtein_row(prefix: Sequence[int], reference: Sequence[int]) -> list[int]:
    """DP row against reference: entry j equals levenshtein(prefix, reference[:j])."""
    row = list(range(len(reference) + 1))
    for token in prefix:
        row = levenshtein_row_extend(row, token, reference)
    return row


def levenshtein_row_extend(row: Sequence[int], token: int, reference: Sequence[int]) -> list[int]:
    """Row for prefix+token given the row for prefix, in O(|reference|)."""
    new = [row[0] + 1]
    append = new.append
    for j, ref_tok in enumerate(reference, 1):
        append(min(row[j] + 1, new[j - 1] + 1, row[j - 1] + (token != ref_tok)))
    return new


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    """Positions at which a and b differ; defined for equal lengths only."""
    if len(a) != len(b):
        raise UnequalLength(f"hamming needs equal lengths, got {len(a)} and {len(b)}")
    return sum(x != y for x, y in zip(a, b))
