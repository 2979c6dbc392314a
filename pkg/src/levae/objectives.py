"""Training losses: ELBO variants, oracle distillation, and the surrogate.

The surrogate total is lambda * (distillation KL along a control-policy
rollout) + alpha * (teacher-forced NLL) + tau * (posterior KL). Rollout
trajectories are treated as empirical draws: no gradient flows through the
token choices, only through the per-step model distributions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigInvalid
from .models import (
    GeneratorParameters,
    SequenceModel,
    decode,
    encode_tensors,
    gaussian_kl_tensors,
    init_state,
    legal_action_mask,
    pad_batch,
    reparameterize_tensors,
    sequence_nll_tensors,
    step,
)
from .oracle import policy_from_q, q_values_from_row
from .sequences import BOS, EOS, TokenSeq, Vocabulary, levenshtein, levenshtein_row_extend

CONTROL_KINDS = ("teacher", "model_sample", "greedy_argmax", "mixture", "fixed")


@dataclass
class ControlPolicySpec:
    kind: str = "greedy_argmax"

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS:
            raise ConfigInvalid(f"unknown control policy {self.kind!r}")


@dataclass
class LossBreakdown:
    distill_raw: float
    teacher_nll_raw: float
    kl_raw: float
    lam: float
    alpha: float
    tau: float
    total: float
    control_trajectory: TokenSeq | None = None

    @property
    def distill(self) -> float:
        return self.lam * self.distill_raw

    @property
    def teacher_nll(self) -> float:
        return self.alpha * self.teacher_nll_raw

    @property
    def kl(self) -> float:
        return self.tau * self.kl_raw


def cyclical_beta(epoch: int, m_period: int) -> float:
    """Linear ramp to 1 over the first half of each cycle, then flat at 1."""
    return min(1.0, 2.0 * (epoch % m_period) / m_period)


def _entropy(pi: np.ndarray) -> float:
    nz = pi[pi > 0]
    return float(-(nz * np.log(nz)).sum())


def distill_tensors(
    gen: GeneratorParameters,
    z: Tensor,
    references: Sequence[TokenSeq],
    vocab: Vocabulary,
    control: ControlPolicySpec,
    oracle_temperature: float,
    rng: np.random.Generator | None,
    l_cap: int,
    fixed_trajectories: Sequence[TokenSeq] | None = None,
) -> tuple[Tensor, list[TokenSeq]]:
    """Distillation KL summed along a control rollout, per batch row.

    Each visited state contributes KL(pi_oc || p_model); the rollout for a
    row stops once the oracle demands EOS outright (that state included),
    once the control emits EOS, or at l_cap.
    """
    b = len(references)
    v = vocab.size
    mask_logits = legal_action_mask(v)
    rows = [list(range(len(ref) + 1)) for ref in references]
    trajectories: list[list[int]] = [[] for _ in range(b)]
    active = np.ones(b, dtype=bool)
    rollout_kind = "greedy_argmax" if control.kind == "mixture" else control.kind
    if rollout_kind == "fixed" and fixed_trajectories is None:
        raise ConfigInvalid("fixed control needs fixed_trajectories")
    if rollout_kind == "model_sample" and rng is None:
        raise ConfigInvalid("model_sample control needs an rng")

    state = init_state(gen, z)
    tokens_in = np.full(b, BOS, dtype=np.int64)
    distill = Tensor(np.zeros(b))
    neg_entropy = np.zeros(b)
    for t in range(l_cap):
        state, logits = step(gen, state, tokens_in)
        logp = ad.log_softmax(logits, mask_logits)

        pi_mat = np.zeros((b, v))
        eos_only = np.zeros(b, dtype=bool)
        for i in range(b):
            if not active[i]:
                continue
            q = q_values_from_row(rows[i], references[i], vocab)
            optimal, pi = policy_from_q(q, oracle_temperature)
            pi_mat[i] = pi
            neg_entropy[i] -= _entropy(pi)
            eos_only[i] = optimal == frozenset((EOS,))
        distill = distill + (-ad.tsum(Tensor(pi_mat) * logp, axis=-1))

        if rollout_kind == "greedy_argmax":
            chosen = logp.data.argmax(axis=1)
        elif rollout_kind == "model_sample":
            p = np.exp(logp.data)
            cdf = p.cumsum(axis=1)
            u = rng.random(b)
            chosen = np.minimum((cdf < u[:, None]).sum(axis=1), v - 1)
        elif rollout_kind == "teacher":
            chosen = np.array(
                [references[i][t] if t < len(references[i]) else EOS for i in range(b)],
                dtype=np.int64,
            )
        else:  # fixed
            chosen = np.array(
                [
                    fixed_trajectories[i][t] if t < len(fixed_trajectories[i]) else EOS
                    for i in range(b)
                ],
                dtype=np.int64,
            )

        next_active = active & ~eos_only & (chosen != EOS)
        for i in range(b):
            if active[i] and next_active[i]:
                tok = int(chosen[i])
                trajectories[i].append(tok)
                rows[i] = levenshtein_row_extend(rows[i], tok, references[i])
        active = next_active
        if not active.any():
            break
        tokens_in = np.where(active, chosen, EOS)
    return distill + Tensor(neg_entropy), [tuple(s) for s in trajectories]


def surrogate_tensors(
    model: SequenceModel,
    batch: Sequence[TokenSeq],
    eps: np.ndarray,
    lam: float,
    alpha: float,
    tau: float,
    control: ControlPolicySpec,
    oracle_temperature: float,
    rng: np.random.Generator | None,
    vocab: Vocabulary,
    l_cap: int,
    fixed_trajectories: Sequence[TokenSeq] | None = None,
) -> tuple[Tensor, list[LossBreakdown]]:
    """Batched surrogate loss; returns (summed scalar, per-example breakdowns)."""
    if lam < 0 or alpha < 0 or tau < 0 or (lam == 0 and alpha == 0 and tau == 0):
        raise ConfigInvalid("weights must be nonnegative and not all zero")
    b = len(batch)
    ids, lengths = pad_batch(list(batch))
    if model.has_encoder:
        mu, ls = encode_tensors(model.encoder, ids, lengths)
        z = reparameterize_tensors(mu, ls, np.asarray(eps, dtype=np.float64))
        kl_b = gaussian_kl_tensors(mu, ls)
    else:
        z = Tensor(np.zeros((b, model.dims.d_z)))
        kl_b = Tensor(np.zeros(b))

    if alpha > 0:
        nll_b = sequence_nll_tensors(model.generator, ids, lengths, z)
    else:
        with ad.no_grad():
            nll_b = sequence_nll_tensors(model.generator, ids, lengths, z)

    trajectories: list[TokenSeq | None] = [None] * b
    if lam > 0:
        distill_b, trajectories = distill_tensors(
            model.generator,
            z,
            batch,
            vocab,
            control,
            oracle_temperature,
            rng,
            l_cap,
            fixed_trajectories=fixed_trajectories,
        )
    else:
        distill_b = Tensor(np.zeros(b))

    total_b: Tensor | None = None
    if lam > 0:
        total_b = lam * distill_b
    if alpha > 0:
        term = alpha * nll_b
        total_b = term if total_b is None else total_b + term
    if tau > 0 and model.has_encoder:
        term = tau * kl_b
        total_b = term if total_b is None else total_b + term
    if total_b is None:
        total_b = Tensor(np.zeros(b))

    breakdowns = [
        LossBreakdown(
            distill_raw=float(distill_b.data[i]),
            teacher_nll_raw=float(nll_b.data[i]),
            kl_raw=float(kl_b.data[i]),
            lam=lam,
            alpha=alpha,
            tau=tau,
            total=float(total_b.data[i]),
            control_trajectory=trajectories[i],
        )
        for i in range(b)
    ]
    return ad.tsum(total_b), breakdowns


def surrogate_loss(
    x_k: TokenSeq,
    model: SequenceModel,
    eps: np.ndarray,
    lam: float,
    alpha: float,
    tau: float,
    control: ControlPolicySpec,
    vocab: Vocabulary,
    l_cap: int,
    oracle_temperature: float = 0.0,
    rng: np.random.Generator | None = None,
) -> LossBreakdown:
    """Single-example surrogate loss evaluation (no parameter updates)."""
    _, breakdowns = surrogate_tensors(
        model,
        [x_k],
        np.asarray(eps, dtype=np.float64)[None, :],
        lam,
        alpha,
        tau,
        control,
        oracle_temperature,
        rng,
        vocab,
        l_cap,
    )
    return breakdowns[0]


def elbo_loss(
    x: TokenSeq,
    model: SequenceModel,
    eps: np.ndarray,
    beta: float,
    vocab: Vocabulary,
    l_cap: int,
) -> LossBreakdown:
    """Single-sample negative ELBO: NLL + beta * KL (beta=1 is the vanilla VAE)."""
    return surrogate_loss(
        x,
        model,
        eps,
        lam=0.0,
        alpha=1.0,
        tau=beta,
        control=ControlPolicySpec("teacher"),
        vocab=vocab,
        l_cap=l_cap,
    )


def distillation_term(
    gen: GeneratorParameters,
    z: np.ndarray,
    reference: TokenSeq,
    vocab: Vocabulary,
    control: ControlPolicySpec,
    l_cap: int,
    oracle_temperature: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, TokenSeq]:
    """Single-example distillation KL and the control trajectory it followed."""
    with ad.no_grad():
        term, trajs = distill_tensors(
            gen,
            Tensor(np.asarray(z, dtype=np.float64)[None, :]),
            [reference],
            vocab,
            control,
            oracle_temperature,
            rng,
            l_cap,
        )
    return float(term.data[0]), trajs[0]


def approx_bound_loss(
    x_k: TokenSeq,
    model: SequenceModel,
    eps: np.ndarray,
    tau: float,
    n_inner: int,
    rng: np.random.Generator,
    l_cap: int,
) -> dict[str, float]:
    """Per-example diagnostic of the approximate bound: E[D_edit]/tau + KL.

    Monitors what the distillation surrogate stands in for; not a training
    path (no gradients).
    """
    if n_inner < 1:
        raise ConfigInvalid("n_inner must be >= 1")
    ids, lengths = pad_batch([x_k])
    with ad.no_grad():
        mu, ls = encode_tensors(model.encoder, ids, lengths)
        z_t = reparameterize_tensors(mu, ls, np.asarray(eps, dtype=np.float64)[None, :])
        kl = float(gaussian_kl_tensors(mu, ls).data[0])
    z = np.broadcast_to(z_t.data[0], (n_inner, model.dims.d_z)).copy()
    samples = decode(model.generator, z, mode="sample", rng=rng, l_cap=l_cap).sequences
    recon = float(np.mean([levenshtein(s, x_k) for s in samples])) / tau
    return {"reconstruction": recon, "kl": kl, "value": recon + kl}
