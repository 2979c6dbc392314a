"""Shared fixtures and independent reference oracles used across the suite."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from levae.models import ModelDims, init_model
from levae.sequences import Vocabulary


def levenshtein_recursive(a: tuple, b: tuple) -> int:
    """Textbook recursive definition; the independent distance oracle."""

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            rec(i - 1, j) + 1,
            rec(i, j - 1) + 1,
            rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return rec(len(a), len(b))


def all_sequences(ids, max_len):
    """Every tuple over ids of length 0..max_len."""
    import itertools

    out = []
    for l in range(max_len + 1):
        out.extend(itertools.product(ids, repeat=l))
    return out


@pytest.fixture
def vocab3():
    return Vocabulary(["a", "b", "c"])


@pytest.fixture
def vocab2():
    return Vocabulary(["a", "b"])


@pytest.fixture
def figure_vocab():
    return Vocabulary(sorted({"this", "pizza", "is", "very", "good", "the", "risotto"}))


def tiny_model(vocab_size=5, d_emb=3, d_h=4, d_z=1, seed=0, eos_bias=0.0, with_encoder=True):
    """Small random model; eos_bias > 0 concentrates mass on short sequences."""
    dims = ModelDims(vocab_size=vocab_size, d_emb=d_emb, d_h=d_h, d_z=d_z)
    model = init_model(dims, np.random.default_rng(seed), with_encoder=with_encoder)
    if eos_bias:
        model.generator.b_out.data[1] += eos_bias
    return model


def zero_generator(model):
    """Flatten the generator to uniform-over-legal outputs at every state."""
    for _, p in model.generator.named():
        p.data[:] = 0.0
    return model


def prior_encoder(model):
    """Force the encoder to emit N(0, I) for every input."""
    for _, p in model.encoder.named():
        p.data[:] = 0.0
    return model
