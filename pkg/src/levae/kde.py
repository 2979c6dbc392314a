"""Edit-distance kernel density estimate over sequences and its KL bounds.

The nonparametric distribution mixes kernels exp(-D_edit(x, x_k)/tau)/Z_k
over the training set. At desk scale the partition functions and the model
distribution are computed exactly by enumerating every content sequence up
to a length cap, with a certified geometric bound on the discarded tail, so
the naive and importance-sampled upper bounds can be checked against the
exact KL.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    DivergentKernel,
    EnumerationTooLarge,
    LatentTooLarge,
    TailTooLarge,
    UnequalLength,
)
from .models import (
    EncoderParameters,
    GeneratorParameters,
    Tensor as _T,
    decode,
    encode_tensors,
    entropy_upper_bound,
    pad_batch,
    sequence_nll_tensors,
)
from .sequences import N_RESERVED, TokenSeq, Vocabulary, levenshtein, hamming

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class KdeConfig:
    tau: float
    dataset: list[TokenSeq]
    vocab: Vocabulary
    l_max: int
    tail_tolerance: float = 1e-6
    node_budget: int = 2_000_000

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not self.dataset:
            raise ValueError("dataset must be nonempty")
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")


@dataclass
class BoundReport:
    """Value and per-term breakdown of an upper bound on KL(p_model || p_kde)."""

    value: float
    mc_stderr: float
    terms: dict[str, float] = field(default_factory=dict)
    term_stderr: dict[str, float] = field(default_factory=dict)


def check_kernel_convergence(tau: float, content_size: int) -> None:
    if content_size >= 2 and tau >= 1.0 / math.log(content_size):
        raise DivergentKernel(
            f"tau={tau} >= 1/ln({content_size}): partition sum diverges"
        )


def enumeration_size(content_size: int, l_max: int) -> int:
    return sum(content_size**l for l in range(l_max + 1))


def enumerate_sequences(vocab: Vocabulary, l_max: int, node_budget: int = 2_000_000) -> list[TokenSeq]:
    """Every content sequence of length 0..l_max, shortest first, lexicographic."""
    n = enumeration_size(vocab.content_size, l_max)
    if n > node_budget:
        raise EnumerationTooLarge(f"{n} sequences exceed budget {node_budget}")
    ids = list(vocab.content_ids())
    out: list[TokenSeq] = []
    for l in range(l_max + 1):
        out.extend(itertools.product(ids, repeat=l))
    return out


def distances_to_reference(sequences: Sequence[TokenSeq], reference: TokenSeq) -> np.ndarray:
    """Levenshtein distance from each sequence to one reference, batched by length."""
    n = len(sequences)
    out = np.empty(n, dtype=np.int64)
    ref = np.asarray(reference, dtype=np.int64)
    r = len(ref)
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(sequences):
        by_len.setdefault(len(s), []).append(i)
    for l, idx in by_len.items():
        if l == 0:
            out[idx] = r
            continue
        mat = np.array([sequences[i] for i in idx], dtype=np.int64)
        row = np.broadcast_to(np.arange(r + 1), (len(idx), r + 1)).copy()
        for pos in range(l):
            neq = (mat[:, pos : pos + 1] != ref[None, :]).astype(np.int64)
            new = np.empty_like(row)
            new[:, 0] = row[:, 0] + 1
            for j in range(1, r + 1):
                new[:, j] = np.minimum(
                    np.minimum(row[:, j] + 1, new[:, j - 1] + 1),
                    row[:, j - 1] + neq[:, j - 1],
                )
            row = new
        out[idx] = row[:, r]
    return out


def partition_tail_bound(cfg: KdeConfig, x_k: TokenSeq) -> float:
    """Geometric bound on the partition mass of sequences longer than l_max.

    Uses D_edit(x, x_k) >= |x| - |x_k|, so each length-L shell contributes at
    most V_content^L * exp(-(L - |x_k|)/tau); requires the shell ratio
    V_content * exp(-1/tau) < 1.
    """
    v_c = cfg.vocab.content_size
    check_kernel_convergence(cfg.tau, v_c)
    ratio = v_c * math.exp(-1.0 / cfg.tau)
    l0 = cfg.l_max + 1
    lead = (v_c**l0) * math.exp(-(l0 - len(x_k)) / cfg.tau)
    return lead / (1.0 - ratio)


def partition_function_exact(x_k: TokenSeq, cfg: KdeConfig,
                             sequences: Sequence[TokenSeq] | None = None) -> tuple[float, float]:
    """(Z_k over sequences of length <= l_max, certified tail bound).

    Z_k is the enumerated sum only; the tail is reported, never added.
    """
    tail = partition_tail_bound(cfg, x_k)
    if tail > cfg.tail_tolerance:
        raise TailTooLarge(
            f"tail bound {tail:.3e} exceeds tolerance {cfg.tail_tolerance:.3e}; raise l_max"
        )
    if sequences is None:
        sequences = enumerate_sequences(cfg.vocab, cfg.l_max, cfg.node_budget)
    d = distances_to_reference(sequences, x_k)
    z = float(np.exp(-d / cfg.tau).sum())
    return z, tail


@dataclass
class KdeTable:
    """Partition functions and enumeration shared across KDE queries."""

    cfg: KdeConfig
    sequences: list[TokenSeq]
    log_z: np.ndarray
    tails: np.ndarray

    @property
    def partitions(self) -> np.ndarray:
        return np.exp(self.log_z)


def build_kde_table(cfg: KdeConfig) -> KdeTable:
    sequences = enumerate_sequences(cfg.vocab, cfg.l_max, cfg.node_budget)
    log_z = np.empty(len(cfg.dataset))
    tails = np.empty(len(cfg.dataset))
    for k, x_k in enumerate(cfg.dataset):
        z, tail = partition_function_exact(x_k, cfg, sequences=sequences)
        log_z[k] = math.log(z)
        tails[k] = tail
    return KdeTable(cfg=cfg, sequences=sequences, log_z=log_z, tails=tails)


def _logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m
    return out.squeeze(axis) if axis is not None else float(out.reshape(()))


def kde_log_prob(x: TokenSeq, cfg: KdeConfig, partitions: np.ndarray) -> float:
    """log p_kde(x) for one sequence; partitions holds Z_k per dataset element."""
    d = np.array([levenshtein(x, x_k) for x_k in cfg.dataset], dtype=np.float64)
    terms = -d / cfg.tau - np.log(partitions)
    return float(_logsumexp(terms) - math.log(len(cfg.dataset)))


def kde_log_probs_enumerated(table: KdeTable) -> np.ndarray:
    """log p_kde(x) for every enumerated sequence at once."""
    cfg = table.cfg
    n = len(table.sequences)
    terms = np.empty((n, len(cfg.dataset)))
    for k, x_k in enumerate(cfg.dataset):
        d = distances_to_reference(table.sequences, x_k)
        terms[:, k] = -d / cfg.tau - table.log_z[k]
    return _logsumexp(terms, axis=1) - math.log(len(cfg.dataset))


# -- exact model distribution via Gauss-Hermite quadrature ---------------------

def gauss_hermite_nodes(n_nodes: int, d_z: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and log-weights for E_{z~N(0,I_d)}[f(z)] as sum w_i f(z_i)."""
    if d_z > 2:
        raise LatentTooLarge("quadrature supports latent dimension <= 2")
    x, w = np.polynomial.hermite.hermgauss(n_nodes)
    z1 = math.sqrt(2.0) * x
    logw1 = np.log(w) - 0.5 * math.log(math.pi)
    if d_z == 1:
        return z1[:, None], logw1
    zz = np.array([(a, b) for a in z1 for b in z1])
    logw = np.array([la + lb for la in logw1 for lb in logw1])
    return zz, logw


def model_log_probs_exact(
    gen: GeneratorParameters,
    sequences: Sequence[TokenSeq],
    d_z: int,
    n_nodes: int = 64,
) -> np.ndarray:
    """log p_model(x) = log sum_i w_i p(x|z_i) for each sequence, by quadrature."""
    z_nodes, log_w = gauss_hermite_nodes(n_nodes, d_z)
    ids, lengths = pad_batch(list(sequences))
    ll = np.empty((len(sequences), len(log_w)))
    with ad.no_grad():
        for j in range(len(log_w)):
            z = np.broadcast_to(z_nodes[j], (len(sequences), d_z)).copy()
            ll[:, j] = -sequence_nll_tensors(gen, ids, lengths, _T(z)).data
    return _logsumexp(ll + log_w[None, :], axis=1)


@dataclass
class ExactKlReport:
    value: float
    model_mass: float
    kde_mass: float


def exact_kde_kl_report(
    gen: GeneratorParameters,
    cfg: KdeConfig,
    d_z: int,
    quadrature_nodes: int = 64,
    table: KdeTable | None = None,
) -> ExactKlReport:
    """KL(p_model || p_kde) summed over the enumerable support.

    The model mass outside length l_max is reported as 1 - model_mass; keep
    it negligible (EOS-leaning models) for the value to be meaningful.
    """
    if table is None:
        table = build_kde_table(cfg)
    log_pm = model_log_probs_exact(gen, table.sequences, d_z, quadrature_nodes)
    log_pd = kde_log_probs_enumerated(table)
    pm = np.exp(log_pm)
    value = float((pm * (log_pm - log_pd)).sum())
    return ExactKlReport(
        value=value,
        model_mass=float(pm.sum()),
        kde_mass=float(np.exp(log_pd).sum()),
    )


def exact_kde_kl(
    gen: GeneratorParameters,
    cfg: KdeConfig,
    d_z: int,
    quadrature_nodes: int = 64,
    table: KdeTable | None = None,
) -> float:
    return exact_kde_kl_report(gen, cfg, d_z, quadrature_nodes, table).value


def exact_model_entropy(
    gen: GeneratorParameters, d_z: int, vocab: Vocabulary, l_max: int,
    n_nodes: int = 64, node_budget: int = 2_000_000,
) -> tuple[float, float]:
    """(-sum p log p over sequences <= l_max, truncated model mass)."""
    seqs = enumerate_sequences(vocab, l_max, node_budget)
    log_pm = model_log_probs_exact(gen, seqs, d_z, n_nodes)
    pm = np.exp(log_pm)
    return float(-(pm * log_pm).sum()), float(1.0 - pm.sum())


# -- upper bounds ---------------------------------------------------------------

def _seq_distance(metric: str, a: TokenSeq, b: TokenSeq) -> int:
    return levenshtein(a, b) if metric == "levenshtein" else hamming(a, b)


def naive_bound(
    gen: GeneratorParameters,
    cfg: KdeConfig,
    d_z: int,
    n_model_samples: int,
    rng: np.random.Generator,
    metric: str = "levenshtein",
    include_log_z: bool = True,
    entropy_mode: str = "mc",
    n_entropy_samples: int = 2000,
    l_cap: int | None = None,
    table: KdeTable | None = None,
) -> BoundReport:
    """Jensen bound: (1/(tau|D|)) sum_k E[D(x, x_k)] - H(p_model) + sum_k log Z_k."""
    if l_cap is None:
        l_cap = 2 * cfg.l_max + 2
    fixed = len(cfg.dataset[0]) if metric == "hamming" else None
    z = rng.standard_normal((n_model_samples, d_z))
    samples = decode(gen, z, mode="sample", rng=rng, l_cap=l_cap, fixed_length=fixed).sequences
    per_sample = np.empty(n_model_samples)
    for i, x in enumerate(samples):
        per_sample[i] = sum(_seq_distance(metric, x, x_k) for x_k in cfg.dataset)
    scale = 1.0 / (cfg.tau * len(cfg.dataset))
    recon = float(per_sample.mean() * scale)
    recon_se = float(per_sample.std(ddof=1) / math.sqrt(n_model_samples) * scale)

    if entropy_mode == "exact":
        h, _ = exact_model_entropy(gen, d_z, cfg.vocab, cfg.l_max, node_budget=cfg.node_budget)
        h_se = 0.0
    else:
        h, h_se = entropy_upper_bound(gen, d_z, n_entropy_samples, rng, l_cap=l_cap)

    log_z_term = 0.0
    if include_log_z:
        if table is None:
            table = build_kde_table(cfg)
        log_z_term = float(table.log_z.sum())

    terms = {
        "reconstruction": recon,
        "encoder_entropy": 0.0,
        "aggregated_posterior": 0.0,
        "log_partition": log_z_term,
        "model_entropy": -h,
    }
    stderr = {
        "reconstruction": recon_se,
        "encoder_entropy": 0.0,
        "aggregated_posterior": 0.0,
        "log_partition": 0.0,
        "model_entropy": h_se,
    }
    return BoundReport(
        value=float(sum(terms.values())),
        mc_stderr=float(math.sqrt(sum(s * s for s in stderr.values()))),
        terms=terms,
        term_stderr=stderr,
    )


def naive_bound_marginal_optimum(
    dataset: Sequence[TokenSeq], tau: float, vocab: Vocabulary
) -> np.ndarray:
    """Analytic optimum of the naive Hamming bound with the entropy term.

    Position i gets the Gibbs distribution p(v) proportional to
    exp(-c_i(v)/tau) with c_i(v) = |D| - count of v at position i, over
    content tokens; the same distribution for every conditioning prefix.
    """
    lengths = {len(x) for x in dataset}
    if len(lengths) != 1:
        raise UnequalLength("marginal optimum needs a fixed-length dataset")
    (length,) = lengths
    v_c = vocab.content_size
    counts = np.zeros((length, v_c))
    for x in dataset:
        for i, tok in enumerate(x):
            counts[i, tok - N_RESERVED] += 1
    costs = len(dataset) - counts
    g = np.exp(-(costs - costs.min(axis=1, keepdims=True)) / tau)
    return g / g.sum(axis=1, keepdims=True)


def log_normal_diag(z: np.ndarray, mu: np.ndarray, log_sigma: np.ndarray) -> np.ndarray:
    """log N(z_n; mu_k, diag sigma_k^2) for all pairs; (N, K) from (N,d),(K,d),(K,d)."""
    z = np.atleast_2d(z)
    diff = (z[:, None, :] - mu[None, :, :]) / np.exp(log_sigma)[None, :, :]
    return -0.5 * ((diff**2).sum(axis=2) + LOG_2PI * z.shape[1]) - log_sigma.sum(axis=1)[None, :]


def log_standard_normal(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    return -0.5 * ((z**2).sum(axis=1) + LOG_2PI * z.shape[1])


def posterior_bank(enc: EncoderParameters, dataset: Sequence[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mu, log_sigma) arrays for every dataset element."""
    ids, lengths = pad_batch(list(dataset))
    with ad.no_grad():
        mu, ls = encode_tensors(enc, ids, lengths)
    return mu.data.copy(), ls.data.copy()


def aggregated_log_prob(z: np.ndarray, mus: np.ndarray, log_sigmas: np.ndarray) -> np.ndarray:
    """log of the dataset-averaged encoder mixture at each z."""
    comp = log_normal_diag(z, mus, log_sigmas)
    return _logsumexp(comp, axis=1) - math.log(mus.shape[0])


def aggregated_posterior_kl(
    enc: EncoderParameters,
    dataset: Sequence[TokenSeq],
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """MC estimate (value, stderr) of KL(aggregated posterior || standard prior)."""
    mus, log_sigmas = posterior_bank(enc, dataset)
    k = rng.integers(0, mus.shape[0], size=n_samples)
    z = mus[k] + np.exp(log_sigmas[k]) * rng.standard_normal((n_samples, mus.shape[1]))
    vals = aggregated_log_prob(z, mus, log_sigmas) - log_standard_normal(z)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def tight_bound(
    enc: EncoderParameters,
    gen: GeneratorParameters,
    cfg: KdeConfig,
    d_z: int,
    n_outer: int,
    n_agg: int,
    rng: np.random.Generator,
    entropy_mode: str = "mc",
    n_entropy_samples: int = 2000,
    l_cap: int | None = None,
    table: KdeTable | None = None,
) -> BoundReport:
    """Importance-sampled upper bound with the aggregated-posterior ratio.

    Five terms: reconstruction weighted by p(z)/q(z), encoder entropy,
    -E_{p(z)} log q(z) (n_agg prior samples), weighted log Z_k, and the
    model entropy estimate. q(z) is the exact dataset mixture.
    """
    if l_cap is None:
        l_cap = 2 * cfg.l_max + 2
    if table is None:
        table = build_kde_table(cfg)
    mus, log_sigmas = posterior_bank(enc, cfg.dataset)
    n_data = len(cfg.dataset)

    recon_v = np.empty((n_data, n_outer))
    enc_ent_v = np.empty((n_data, n_outer))
    log_z_v = np.empty((n_data, n_outer))
    for k, x_k in enumerate(cfg.dataset):
        z = mus[k] + np.exp(log_sigmas[k]) * rng.standard_normal((n_outer, d_z))
        log_qk = log_normal_diag(z, mus[k : k + 1], log_sigmas[k : k + 1])[:, 0]
        w = np.exp(log_standard_normal(z) - aggregated_log_prob(z, mus, log_sigmas))
        xs = decode(gen, z, mode="sample", rng=rng, l_cap=l_cap).sequences
        dists = np.array([levenshtein(x, x_k) for x in xs], dtype=np.float64)
        recon_v[k] = w * dists / cfg.tau
        enc_ent_v[k] = w * log_qk
        log_z_v[k] = w * table.log_z[k]

    def mean_se(v: np.ndarray) -> tuple[float, float]:
        mean = float(v.mean())
        var_k = v.var(axis=1, ddof=1) / v.shape[1]
        return mean, float(math.sqrt(var_k.sum()) / v.shape[0])

    recon, recon_se = mean_se(recon_v)
    enc_ent, enc_ent_se = mean_se(enc_ent_v)
    log_z_term, log_z_se = mean_se(log_z_v)

    z_prior = rng.standard_normal((n_agg, d_z))
    agg_vals = -aggregated_log_prob(z_prior, mus, log_sigmas)
    agg = float(agg_vals.mean())
    agg_se = float(agg_vals.std(ddof=1) / math.sqrt(n_agg))

    if entropy_mode == "exact":
        h, _ = exact_model_entropy(gen, d_z, cfg.vocab, cfg.l_max, node_budget=cfg.node_budget)
        h_se = 0.0
    else:
        h, h_se = entropy_upper_bound(gen, d_z, n_entropy_samples, rng, l_cap=l_cap)

    terms = {
        "reconstruction": recon,
        "encoder_entropy": enc_ent,
        "aggregated_posterior": agg,
        "log_partition": log_z_term,
        "model_entropy": -h,
    }
    stderr = {
        "reconstruction": recon_se,
        "encoder_entropy": enc_ent_se,
        "aggregated_posterior": agg_se,
        "log_partition": log_z_se,
        "model_entropy": h_se,
    }
    return BoundReport(
        value=float(sum(terms.values())),
        mc_stderr=float(math.sqrt(sum(s * s for s in stderr.values()))),
        terms=terms,
        term_stderr=stderr,
    )


# -- 2-D reward grid illustration ------------------------------------------------

@dataclass
class RewardGrid:
    xs: np.ndarray
    ys: np.ndarray
    field_mixture: np.ndarray
    field_naive: np.ndarray


def reward_grid_demo(
    points: np.ndarray,
    tau: float,
    resolution: int = 200,
    extent: tuple[float, float, float, float] | None = None,
) -> RewardGrid:
    """Continuous analogue with squared Euclidean 'edit' distance.

    field_mixture = log sum_k exp(-||x - x_k||^2 / tau); field_naive is the
    per-point sum -sum_k ||x - x_k||^2 / tau, whose argmax sits at the
    dataset's centre of mass.
    """
    points = np.asarray(points, dtype=np.float64)
    if extent is None:
        lo = points.min(axis=0) - 1.0
        hi = points.max(axis=0) + 1.0
        extent = (lo[0], hi[0], lo[1], hi[1])
    xs = np.linspace(extent[0], extent[1], resolution)
    ys = np.linspace(extent[2], extent[3], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([gx, gy], axis=-1)
    d2 = ((grid[:, :, None, :] - points[None, None, :, :]) ** 2).sum(axis=-1)
    field_mixture = _logsumexp(-d2 / tau, axis=2)
    field_naive = -(d2 / tau).sum(axis=2)
    return RewardGrid(xs=xs, ys=ys, field_mixture=field_mixture, field_naive=field_naive)
