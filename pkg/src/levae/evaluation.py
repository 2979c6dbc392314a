"""Reported metrics: reconstruction distance, ELBO terms, importance-sampled
likelihood/perplexity, position-wise accuracy, and linear probing on the
posterior mean."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateLabels
from .kde import log_standard_normal, log_normal_diag
from .models import (
    SequenceModel,
    decode,
    encode_tensors,
    gaussian_kl_tensors,
    pad_batch,
    sequence_nll_tensors,
)
from .sequences import TokenSeq, levenshtein


@dataclass
class EvalReport:
    """Dataset-level metrics; per-token perplexity counts the EOS decision."""

    lev_d: float | None
    recon_nll: float | None
    kl: float | None
    neg_elbo: float | None
    nll_is: float
    nll_is_stderr: float
    ppl: float
    n_sequences: int
    n_tokens: int
    n_is_sequences: int


def posterior_means(model: SequenceModel, sequences: Sequence[TokenSeq],
                    batch_size: int = 256) -> np.ndarray:
    """Posterior mean mu for each sequence, (N, d_z)."""
    out = np.empty((len(sequences), model.dims.d_z))
    for lo in range(0, len(sequences), batch_size):
        chunk = list(sequences[lo : lo + batch_size])
        ids, lengths = pad_batch(chunk)
        with ad.no_grad():
            mu, _ = encode_tensors(model.encoder, ids, lengths)
        out[lo : lo + len(chunk)] = mu.data
    return out


def greedy_reconstructions(model: SequenceModel, sequences: Sequence[TokenSeq],
                           l_cap: int, batch_size: int = 256) -> list[TokenSeq]:
    """Argmax decodes from the posterior mean (zeros for a latent-free LM)."""
    recons: list[TokenSeq] = []
    for lo in range(0, len(sequences), batch_size):
        chunk = list(sequences[lo : lo + batch_size])
        if model.has_encoder:
            z = posterior_means(model, chunk)
        else:
            z = np.zeros((len(chunk), model.dims.d_z))
        recons.extend(decode(model.generator, z, mode="greedy", l_cap=l_cap).sequences)
    return recons


def reconstruction_metrics(model: SequenceModel, sequences: Sequence[TokenSeq],
                           l_cap: int) -> tuple[float, list[TokenSeq]]:
    """(mean levenshtein(x, x_hat)/|x|, reconstructions)."""
    recons = greedy_reconstructions(model, sequences, l_cap)
    lev_d = float(
        np.mean([levenshtein(x, y) / max(len(x), 1) for x, y in zip(sequences, recons)])
    )
    return lev_d, recons


def importance_sampled_ll(
    model: SequenceModel,
    x: TokenSeq,
    n_samples: int = 1000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """IS estimate of -log p(x) with the approximate posterior as proposal.

    Returns (nll, stderr); stderr by the delta method on the normalized
    weights, so the value is comparable at 3-sigma against quadrature.
    """
    rng = rng or np.random.default_rng(0)
    ids, lengths = pad_batch([x])
    with ad.no_grad():
        mu_t, ls_t = encode_tensors(model.encoder, ids, lengths)
    mu, ls = mu_t.data[0], ls_t.data[0]
    z = mu + np.exp(ls) * rng.standard_normal((n_samples, model.dims.d_z))
    ids_rep = np.repeat(ids, n_samples, axis=0)
    lengths_rep = np.repeat(lengths, n_samples, axis=0)
    with ad.no_grad():
        log_px_z = -sequence_nll_tensors(model.generator, ids_rep, lengths_rep, Tensor(z)).data
    log_w = log_px_z + log_standard_normal(z) - log_normal_diag(z, mu[None], ls[None])[:, 0]
    m = log_w.max()
    w = np.exp(log_w - m)
    mean_w = w.mean()
    nll = -(m + math.log(mean_w))
    stderr = float(w.std(ddof=1) / (math.sqrt(n_samples) * mean_w))
    return float(nll), stderr


def evaluate(
    model: SequenceModel,
    sequences: Sequence[TokenSeq],
    rng: np.random.Generator,
    n_is_samples: int = 1000,
    is_limit: int | None = 200,
    n_elbo_samples: int = 32,
    l_cap: int | None = None,
) -> EvalReport:
    """Full metric sweep. IS likelihood runs on the first is_limit sequences.

    For a latent-free LM the ELBO block is absent and the IS estimate
    reduces to the exact sequence NLL at z = 0.
    """
    if l_cap is None:
        l_cap = 2 * max(len(s) for s in sequences) + 2
    n = len(sequences)
    ids, lengths = pad_batch(list(sequences))

    lev_d = recon_nll = kl_mean = neg_elbo = None
    if model.has_encoder:
        lev_d, _ = reconstruction_metrics(model, sequences, l_cap)
        with ad.no_grad():
            mu, ls = encode_tensors(model.encoder, ids, lengths)
            kl_b = gaussian_kl_tensors(mu, ls).data
            nll_acc = np.zeros(n)
            for _ in range(n_elbo_samples):
                eps = rng.standard_normal((n, model.dims.d_z))
                z = mu.data + np.exp(ls.data) * eps
                nll_acc += sequence_nll_tensors(model.generator, ids, lengths, Tensor(z)).data
        recon_nll = float(nll_acc.mean() / n_elbo_samples)
        kl_mean = float(kl_b.mean())
        neg_elbo = recon_nll + kl_mean

    is_seqs = sequences if is_limit is None else sequences[:is_limit]
    nlls = np.empty(len(is_seqs))
    errs = np.empty(len(is_seqs))
    if model.has_encoder:
        for i, x in enumerate(is_seqs):
            nlls[i], errs[i] = importance_sampled_ll(model, x, n_is_samples, rng)
    else:
        with ad.no_grad():
            sub_ids, sub_len = pad_batch(list(is_seqs))
            z = np.zeros((len(is_seqs), model.dims.d_z))
            nlls[:] = sequence_nll_tensors(model.generator, sub_ids, sub_len, Tensor(z)).data
        errs[:] = 0.0
    n_tokens = int(sum(len(s) + 1 for s in is_seqs))
    return EvalReport(
        lev_d=lev_d,
        recon_nll=recon_nll,
        kl=kl_mean,
        neg_elbo=neg_elbo,
        nll_is=float(nlls.mean()),
        nll_is_stderr=float(np.sqrt((errs**2).sum()) / len(is_seqs)),
        ppl=float(np.exp(nlls.sum() / n_tokens)),
        n_sequences=n,
        n_tokens=n_tokens,
        n_is_sequences=len(is_seqs),
    )


def positionwise_accuracy(
    model: SequenceModel,
    sequences: Sequence[TokenSeq],
    l_cap: int,
    reconstructions: Sequence[TokenSeq] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(anywhere-membership accuracy, aligned accuracy, count) per position.

    Position i counts sequences with |x| > i; 'anywhere' asks whether token
    x_i occurs in the greedy reconstruction at all, 'aligned' whether the
    reconstruction matches at position i exactly.
    """
    recons = reconstructions
    if recons is None:
        recons = greedy_reconstructions(model, sequences, l_cap)
    max_len = max(len(s) for s in sequences)
    hits = np.zeros(max_len)
    aligned = np.zeros(max_len)
    counts = np.zeros(max_len)
    for x, r in zip(sequences, recons):
        r_set = set(r)
        for i, tok in enumerate(x):
            counts[i] += 1
            hits[i] += tok in r_set
            aligned[i] += i < len(r) and r[i] == tok
    with np.errstate(invalid="ignore"):
        return hits / counts, aligned / counts, counts


# -- linear probing ----------------------------------------------------------------

def paired_features(mu_a: np.ndarray, mu_b: np.ndarray) -> np.ndarray:
    """[mu_a, mu_b, mu_a - mu_b, mu_a * mu_b] feature map for sequence pairs."""
    return np.concatenate([mu_a, mu_b, mu_a - mu_b, mu_a * mu_b], axis=1)


def train_linear_probe(
    features: np.ndarray, labels: np.ndarray, l2: float = 1e-4
) -> np.ndarray:
    """Multinomial logistic regression to convergence; returns (D+1, C) weights.

    Convex objective (mean cross-entropy + l2 on the non-bias block) solved
    by L-BFGS with gradient tolerance 1e-8; deterministic from the zero
    initialization.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DegenerateLabels("probe needs at least 2 classes")
    n_class = int(classes.max()) + 1
    if len(np.unique(labels)) != n_class:
        raise DegenerateLabels("probe needs at least one example of every class")
    x = np.hstack([features, np.ones((features.shape[0], 1))])
    n, d = x.shape

    def objective(wflat: np.ndarray) -> tuple[float, np.ndarray]:
        w = wflat.reshape(d, n_class)
        logits = x @ w
        logits -= logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1))
        nll = float((logz - logits[np.arange(n), labels]).mean())
        p = np.exp(logits - logz[:, None])
        p[np.arange(n), labels] -= 1.0
        grad = x.T @ p / n
        reg = w.copy()
        reg[-1] = 0.0  # bias unregularized
        nll += 0.5 * l2 * float((reg * reg).sum())
        grad += l2 * reg
        return nll, grad.ravel()

    res = minimize(
        objective,
        np.zeros(d * n_class),
        jac=True,
        method="L-BFGS-B",
        options={"gtol": 1e-8, "ftol": 0.0, "maxiter": 2000},
    )
    return res.x.reshape(d, n_class)


def probe_accuracy(weights: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    x = np.hstack([features, np.ones((features.shape[0], 1))])
    pred = (x @ weights).argmax(axis=1)
    return float((pred == np.asarray(labels)).mean())


def stratified_subsample(
    labels: np.ndarray, fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Indices of ~fraction of the rows, at least one per class, deterministic."""
    labels = np.asarray(labels)
    picked = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = max(1, int(round(fraction * len(idx))))
        picked.append(rng.permutation(idx)[:k])
    return np.sort(np.concatenate(picked))


def semi_supervised_curve(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    test_features: np.ndarray,
    test_labels: np.ndarray,
    fractions: Sequence[float],
    rng: np.random.Generator,
    l2: float = 1e-4,
) -> list[tuple[float, float]]:
    """Probe test accuracy as the labeled training fraction grows."""
    out = []
    for f in fractions:
        if not 0 < f <= 1:
            raise DegenerateLabels(f"fraction {f} outside (0, 1]")
        idx = stratified_subsample(train_labels, f, rng)
        w = train_linear_probe(train_features[idx], np.asarray(train_labels)[idx], l2)
        out.append((float(f), probe_accuracy(w, test_features, test_labels)))
    return out
