"""Recurrent generator and Gaussian encoder built on the autodiff engine.

The generator is a single-layer gated recurrent cell conditioned on the
latent code through its initial hidden state; the encoder is a one-layer
bidirectional cell with linear heads for the posterior mean and log-sigma.
Everything runs in float64. Internal *_tensors functions participate in the
autodiff graph; the plain-named wrappers run without recording and return
numpy values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptySequence
from .sequences import BOS, EOS, PAD, TokenSeq

MASK_NEG = -1e30


@dataclass
class ModelDims:
    vocab_size: int
    d_emb: int
    d_h: int
    d_z: int
    cell: str = "gru"
    shared_embeddings: bool = False


@dataclass
class GruWeights:
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_u: Tensor
    u_u: Tensor
    b_u: Tensor
    w_c: Tensor
    u_c: Tensor
    b_c: Tensor

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.w_r", self.w_r),
            (f"{prefix}.u_r", self.u_r),
            (f"{prefix}.b_r", self.b_r),
            (f"{prefix}.w_u", self.w_u),
            (f"{prefix}.u_u", self.u_u),
            (f"{prefix}.b_u", self.b_u),
            (f"{prefix}.w_c", self.w_c),
            (f"{prefix}.u_c", self.u_c),
            (f"{prefix}.b_c", self.b_c),
        ]


@dataclass
class GeneratorParameters:
    emb: Tensor
    gru: GruWeights
    w_init: Tensor
    b_init: Tensor
    w_out: Tensor
    b_out: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        return (
            [("gen.emb", self.emb)]
            + self.gru.named("gen.gru")
            + [
                ("gen.w_init", self.w_init),
                ("gen.b_init", self.b_init),
                ("gen.w_out", self.w_out),
                ("gen.b_out", self.b_out),
            ]
        )


@dataclass
class EncoderParameters:
    emb: Tensor
    fwd: GruWeights
    bwd: GruWeights
    w_mu: Tensor
    b_mu: Tensor
    w_ls: Tensor
    b_ls: Tensor
    shares_embedding: bool = False

    def named(self) -> list[tuple[str, Tensor]]:
        out = [] if self.shares_embedding else [("enc.emb", self.emb)]
        out += self.fwd.named("enc.fwd") + self.bwd.named("enc.bwd")
        out += [
            ("enc.w_mu", self.w_mu),
            ("enc.b_mu", self.b_mu),
            ("enc.w_ls", self.w_ls),
            ("enc.b_ls", self.b_ls),
        ]
        return out


@dataclass
class GaussianPosterior:
    mu: np.ndarray
    log_sigma: np.ndarray


@dataclass
class SequenceModel:
    dims: ModelDims
    generator: GeneratorParameters
    encoder: EncoderParameters | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = self.generator.named()
        if self.encoder is not None:
            out += self.encoder.named()
        return out

    @property
    def has_encoder(self) -> bool:
        return self.encoder is not None


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    k = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-k, k, size=shape), requires_grad=True)


def _zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _init_gru(rng: np.random.Generator, d_in: int, d_h: int) -> GruWeights:
    return GruWeights(
        w_r=_uniform(rng, (d_in, d_h), d_in),
        u_r=_uniform(rng, (d_h, d_h), d_h),
        b_r=_zeros((d_h,)),
        w_u=_uniform(rng, (d_in, d_h), d_in),
        u_u=_uniform(rng, (d_h, d_h), d_h),
        b_u=_zeros((d_h,)),
        w_c=_uniform(rng, (d_in, d_h), d_in),
        u_c=_uniform(rng, (d_h, d_h), d_h),
        b_c=_zeros((d_h,)),
    )


def init_generator(dims: ModelDims, rng: np.random.Generator) -> GeneratorParameters:
    v, de, dh, dz = dims.vocab_size, dims.d_emb, dims.d_h, dims.d_z
    return GeneratorParameters(
        emb=_uniform(rng, (v, de), de),
        gru=_init_gru(rng, de, dh),
        w_init=_uniform(rng, (dz, dh), dz),
        b_init=_zeros((dh,)),
        w_out=_uniform(rng, (dh, v), dh),
        b_out=_zeros((v,)),
    )


def init_encoder(
    dims: ModelDims, rng: np.random.Generator, shared_emb: Tensor | None = None
) -> EncoderParameters:
    v, de, dh, dz = dims.vocab_size, dims.d_emb, dims.d_h, dims.d_z
    emb = shared_emb if shared_emb is not None else _uniform(rng, (v, de), de)
    return EncoderParameters(
        emb=emb,
        fwd=_init_gru(rng, de, dh),
        bwd=_init_gru(rng, de, dh),
        w_mu=_uniform(rng, (2 * dh, dz), 2 * dh),
        b_mu=_zeros((dz,)),
        w_ls=_uniform(rng, (2 * dh, dz), 2 * dh),
        b_ls=_zeros((dz,)),
        shares_embedding=shared_emb is not None,
    )


def init_model(dims: ModelDims, rng: np.random.Generator, with_encoder: bool = True) -> SequenceModel:
    gen = init_generator(dims, rng)
    enc = None
    if with_encoder:
        shared = gen.emb if dims.shared_embeddings else None
        enc = init_encoder(dims, rng, shared_emb=shared)
    return SequenceModel(dims=dims, generator=gen, encoder=enc)


def legal_action_mask(vocab_size: int) -> np.ndarray:
    """Additive logit mask: BOS and PAD are never legal outputs."""
    mask = np.zeros(vocab_size)
    mask[BOS] = MASK_NEG
    mask[PAD] = MASK_NEG
    return mask


def gru_step(w: GruWeights, e: Tensor, h: Tensor) -> Tensor:
    r = ad.sigmoid(e @ w.w_r + h @ w.u_r + w.b_r)
    u = ad.sigmoid(e @ w.w_u + h @ w.u_u + w.b_u)
    c = ad.tanh(e @ w.w_c + (r * h) @ w.u_c + w.b_c)
    return u * h + (1.0 - u) * c


def init_state(gen: GeneratorParameters, z: Tensor) -> Tensor:
    return ad.tanh(z @ gen.w_init + gen.b_init)


def step(gen: GeneratorParameters, state: Tensor, tokens_in: np.ndarray) -> tuple[Tensor, Tensor]:
    """One recurrent transition; returns (next_state, logits over the vocabulary)."""
    e = ad.rows(gen.emb, np.asarray(tokens_in, dtype=np.int64))
    h = gru_step(gen.gru, e, state)
    return h, h @ gen.w_out + gen.b_out


def pad_batch(sequences: Sequence[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad with PAD; returns (ids (B,T), lengths (B,)). T >= 1."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    t = max(1, int(lengths.max()) if len(lengths) else 1)
    ids = np.full((len(sequences), t), PAD, dtype=np.int64)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s
    return ids, lengths


def encode_tensors(
    enc: EncoderParameters, ids: np.ndarray, lengths: np.ndarray
) -> tuple[Tensor, Tensor]:
    """Bidirectional encoding of a padded batch into posterior (mu, log_sigma)."""
    b, t = ids.shape
    d_h = enc.w_mu.data.shape[0] // 2
    h_f = Tensor(np.zeros((b, d_h)))
    for pos in range(t):
        m = Tensor((pos < lengths).astype(float)[:, None])
        h_new = gru_step(enc.fwd, ad.rows(enc.emb, ids[:, pos]), h_f)
        h_f = m * h_new + (1.0 - m) * h_f
    h_b = Tensor(np.zeros((b, d_h)))
    for pos in range(t - 1, -1, -1):
        m = Tensor((pos < lengths).astype(float)[:, None])
        h_new = gru_step(enc.bwd, ad.rows(enc.emb, ids[:, pos]), h_b)
        h_b = m * h_new + (1.0 - m) * h_b
    h = ad.concat([h_f, h_b], axis=-1)
    return h @ enc.w_mu + enc.b_mu, h @ enc.w_ls + enc.b_ls


def encode(x: TokenSeq, enc: EncoderParameters) -> GaussianPosterior:
    """Posterior parameters for a single sequence (inference mode)."""
    if len(x) == 0:
        raise EmptySequence("cannot encode an empty sequence")
    ids, lengths = pad_batch([x])
    with ad.no_grad():
        mu, ls = encode_tensors(enc, ids, lengths)
    return GaussianPosterior(mu=mu.data[0].copy(), log_sigma=ls.data[0].copy())


def reparameterize_tensors(mu: Tensor, log_sigma: Tensor, eps: np.ndarray) -> Tensor:
    return mu + ad.exp(log_sigma) * Tensor(eps)


def reparameterize(post: GaussianPosterior, eps: np.ndarray) -> np.ndarray:
    return post.mu + np.exp(post.log_sigma) * np.asarray(eps, dtype=np.float64)


def gaussian_kl_tensors(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) per batch row."""
    var = ad.exp(2.0 * log_sigma)
    return 0.5 * ad.tsum(var + ad.square(mu) - 1.0 - 2.0 * log_sigma, axis=-1)


def gaussian_kl(post: GaussianPosterior) -> float:
    var = np.exp(2.0 * post.log_sigma)
    return float(0.5 * np.sum(var + post.mu**2 - 1.0 - 2.0 * post.log_sigma))


def sequence_nll_tensors(
    gen: GeneratorParameters, ids: np.ndarray, lengths: np.ndarray, z: Tensor
) -> Tensor:
    """Teacher-forced -log p(x|z) per batch row, including the EOS step."""
    b, t = ids.shape
    mask_logits = legal_action_mask(gen.b_out.data.shape[0])
    state = init_state(gen, z)
    tokens_in = np.full(b, BOS, dtype=np.int64)
    nll = Tensor(np.zeros(b))
    for pos in range(t + 1):
        state, logits = step(gen, state, tokens_in)
        logp = ad.log_softmax(logits, mask_logits)
        targets = np.where(pos < lengths, ids[:, min(pos, t - 1)], np.where(pos == lengths, EOS, PAD))
        step_mask = (pos <= lengths).astype(float)
        nll = nll + Tensor(step_mask) * (-ad.gather(logp, targets))
        tokens_in = np.where(pos < lengths, ids[:, min(pos, t - 1)], EOS)
    return nll


def sequence_nll(gen: GeneratorParameters, x: TokenSeq, z: np.ndarray) -> float:
    ids, lengths = pad_batch([x])
    with ad.no_grad():
        nll = sequence_nll_tensors(gen, ids, lengths, Tensor(np.asarray(z, dtype=np.float64)[None, :]))
    return float(nll.data[0])


@dataclass
class DecodeResult:
    sequences: list[TokenSeq]
    step_probs: list[np.ndarray] = field(default_factory=list)
    terminated: np.ndarray | None = None


def decode(
    gen: GeneratorParameters,
    z: np.ndarray,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    l_cap: int = 64,
    fixed_length: int | None = None,
) -> DecodeResult:
    """Roll the generator out from latent codes z ((B, d_z) or (d_z,)).

    Greedy picks the argmax legal token (ties to the lowest id); sample draws
    from the per-step distribution. Stops each row at EOS or after l_cap
    content tokens. With fixed_length set, EOS is masked out and exactly that
    many tokens are emitted (Hamming-regime sampling). Stores the per-step
    probability vectors.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    b = z.shape[0]
    v = gen.b_out.data.shape[0]
    mask_logits = legal_action_mask(v)
    if fixed_length is not None:
        mask_logits = mask_logits.copy()
        mask_logits[EOS] = MASK_NEG
        l_cap = fixed_length
    chosen_steps: list[np.ndarray] = []
    active = np.ones(b, dtype=bool)
    step_probs: list[np.ndarray] = []
    with ad.no_grad():
        state = init_state(gen, Tensor(z))
        tokens_in = np.full(b, BOS, dtype=np.int64)
        for _ in range(l_cap):
            state, logits = step(gen, state, tokens_in)
            probs = np.exp(ad.log_softmax(logits, mask_logits).data)
            step_probs.append(probs)
            if mode == "greedy":
                chosen = probs.argmax(axis=1)
            else:
                cdf = probs.cumsum(axis=1)
                u = rng.random(b)
                chosen = np.minimum((cdf < u[:, None]).sum(axis=1), v - 1)
            chosen = np.where(active, chosen, EOS)
            chosen_steps.append(chosen)
            active &= chosen != EOS
            if not active.any():
                break
            tokens_in = chosen
    tokens = np.stack(chosen_steps, axis=1) if chosen_steps else np.empty((b, 0), np.int64)
    n_content = (np.cumprod(tokens != EOS, axis=1) == 1).sum(axis=1)
    sequences = [tuple(int(t) for t in tokens[i, : n_content[i]]) for i in range(b)]
    terminated = ~active if fixed_length is None else np.ones(b, dtype=bool)
    return DecodeResult(
        sequences=sequences,
        step_probs=step_probs,
        terminated=terminated,
    )


def entropy_upper_bound(
    gen: GeneratorParameters,
    d_z: int,
    n_samples: int,
    rng: np.random.Generator,
    l_cap: int = 64,
) -> tuple[float, float]:
    """MC estimate of E_{x~p} E_{z'~p(z)}[-log p(x|z')] >= H(p(x)).

    Jensen on the inner marginal makes each term an upper bound of -log p(x);
    returns (mean, stderr).
    """
    z = rng.standard_normal((n_samples, d_z))
    out = decode(gen, z, mode="sample", rng=rng, l_cap=l_cap)
    z_prime = rng.standard_normal((n_samples, d_z))
    ids, lengths = pad_batch(out.sequences)
    with ad.no_grad():
        nll = sequence_nll_tensors(gen, ids, lengths, Tensor(z_prime)).data
    return float(nll.mean()), float(nll.std(ddof=1) / np.sqrt(n_samples))
