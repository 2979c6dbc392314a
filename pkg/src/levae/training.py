"""Training loop, baselines, the naive-Hamming demonstration, and random search.

One shared RNG stream drives each run with a documented draw order per
epoch: data shuffle, then per-batch reparameterization noise, then rollout
draws (only consumed by sampling control policies). Runs are deterministic
given (seed, config, corpus) in single-threaded execution.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Sgd, Tensor
from .checkpoint import Checkpoint, checkpoint_from_model
from .corpus import Corpus, validation_mask
from .errors import ConfigInvalid, NonFiniteLoss
from .models import (
    ModelDims,
    SequenceModel,
    decode,
    init_model,
    init_state,
    legal_action_mask,
    pad_batch,
    step,
)
from .objectives import ControlPolicySpec, cyclical_beta, surrogate_tensors
from .sequences import BOS, EOS, N_RESERVED, TokenSeq, Vocabulary, levenshtein

METHODS = ("lm", "vae", "beta_vae", "cyclic_vae", "lev_vae", "lev_ae")

CONFIG_JSON_KEYS = {
    "method": "method",
    "lambda": "lam",
    "alpha": "alpha",
    "tau": "tau",
    "beta": "beta",
    "M": "m_period",
    "d_z": "d_z",
    "d_h": "d_h",
    "d_emb": "d_emb",
    "lr": "lr",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "seed": "seed",
    "control": "control",
    "oracle_temperature": "oracle_temperature",
    "optimizer": "optimizer",
    "shared_embeddings": "shared_embeddings",
    "cell": "cell",
}


@dataclass
class TrainConfig:
    method: str = "lev_vae"
    lam: float = 1.0
    alpha: float = 1.0
    tau: float = 1.0
    beta: float = 1.0
    m_period: int = 5
    d_z: int = 16
    d_h: int = 48
    d_emb: int = 24
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    control: str = "greedy_argmax"
    oracle_temperature: float = 0.0
    optimizer: str = "adam"
    shared_embeddings: bool = False
    cell: str = "gru"

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigInvalid(f"unknown method {self.method!r}")
        if min(self.lam, self.alpha, self.tau, self.beta) < 0:
            raise ConfigInvalid("weights must be nonnegative")
        if self.method in ("lm", "vae", "beta_vae", "cyclic_vae") and self.lam != 0:
            raise ConfigInvalid(f"method {self.method} requires lambda == 0")
        if self.method in ("vae", "beta_vae", "cyclic_vae") and self.alpha != 1:
            raise ConfigInvalid(f"method {self.method} requires alpha == 1")
        if self.method == "vae" and self.tau != 1:
            raise ConfigInvalid("vanilla vae requires tau == 1")
        if self.method == "lev_ae" and self.lam <= 0:
            raise ConfigInvalid("lev_ae requires lambda > 0")
        if self.method == "lev_ae" and self.tau != 0:
            raise ConfigInvalid("lev_ae requires tau == 0")
        if self.control == "mixture" and not (self.lam > 0 and self.alpha > 0):
            raise ConfigInvalid("mixture control requires lambda > 0 and alpha > 0")
        if self.control not in ("teacher", "model_sample", "greedy_argmax", "mixture"):
            raise ConfigInvalid(f"unknown control policy {self.control!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigInvalid(f"unknown optimizer {self.optimizer!r}")
        for name in ("m_period", "d_z", "d_h", "d_emb", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigInvalid("lr must be positive")
        if self.oracle_temperature < 0:
            raise ConfigInvalid("oracle_temperature must be nonnegative")

    def weights_for_epoch(self, epoch: int) -> tuple[float, float, float]:
        """Effective (lambda, alpha, tau) for the epoch under this method."""
        if self.method == "lm":
            return 0.0, 1.0, 0.0
        if self.method == "vae":
            return 0.0, 1.0, 1.0
        if self.method == "beta_vae":
            return 0.0, 1.0, self.beta
        if self.method == "cyclic_vae":
            return 0.0, 1.0, cyclical_beta(epoch, self.m_period)
        if self.method == "lev_ae":
            return self.lam, self.alpha, 0.0
        return self.lam, self.alpha, self.tau

    def to_json_dict(self) -> dict:
        d = asdict(self)
        return {json_key: d[attr] for json_key, attr in CONFIG_JSON_KEYS.items()}


def config_from_json_dict(raw: dict) -> TrainConfig:
    unknown = set(raw) - set(CONFIG_JSON_KEYS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    kwargs = {CONFIG_JSON_KEYS[k]: v for k, v in raw.items()}
    try:
        cfg = TrainConfig(**kwargs)
    except TypeError as e:
        raise ConfigInvalid(str(e)) from e
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> TrainConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigInvalid(f"cannot parse config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a JSON object")
    return config_from_json_dict(raw)


@dataclass
class EpochMetrics:
    epoch: int
    total: float
    distill: float
    teacher_nll: float
    kl: float | None
    lev_d: float
    seconds: float


METRICS_HEADER = "epoch,total,distill,teacher_nll,kl,lev_d,seconds"


def write_metrics_csv(path: str | Path, metrics: Sequence[EpochMetrics]) -> None:
    lines = [METRICS_HEADER]
    for m in metrics:
        kl = "" if m.kl is None else repr(m.kl)
        lines.append(
            f"{m.epoch},{m.total!r},{m.distill!r},{m.teacher_nll!r},{kl},"
            f"{m.lev_d!r},{m.seconds!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def greedy_reconstruction_lev_d(
    model: SequenceModel, sequences: Sequence[TokenSeq], l_cap: int, batch_size: int = 256
) -> float:
    """Mean levenshtein(x, greedy reconstruction from posterior mean) / |x|."""
    from .models import encode_tensors  # local to avoid import noise at module top

    total = 0.0
    for lo in range(0, len(sequences), batch_size):
        chunk = list(sequences[lo : lo + batch_size])
        ids, lengths = pad_batch(chunk)
        if model.has_encoder:
            with ad.no_grad():
                mu, _ = encode_tensors(model.encoder, ids, lengths)
            z = mu.data
        else:
            z = np.zeros((len(chunk), model.dims.d_z))
        recon = decode(model.generator, z, mode="greedy", l_cap=l_cap).sequences
        total += sum(levenshtein(x, y) / max(len(x), 1) for x, y in zip(chunk, recon))
    return total / len(sequences)


def train(cfg: TrainConfig, corpus: Corpus) -> tuple[Checkpoint, list[EpochMetrics]]:
    """Run the surrogate-loss training loop over the corpus.

    Per batch: reparameterization draw, control rollout with stored per-step
    distributions, oracle targets by incremental DP, backward pass, optimizer
    step. Metrics report raw (unweighted) per-term means; KL is absent for
    the latent-free LM.
    """
    cfg.validate()
    if len(corpus) == 0:
        raise ConfigInvalid("corpus is empty")
    rng = np.random.default_rng(cfg.seed)
    dims = ModelDims(
        vocab_size=corpus.vocab.size,
        d_emb=cfg.d_emb,
        d_h=cfg.d_h,
        d_z=cfg.d_z,
        cell=cfg.cell,
        shared_embeddings=cfg.shared_embeddings,
    )
    model = init_model(dims, rng, with_encoder=cfg.method != "lm")
    params = model.named_parameters()
    opt = Adam(lr=cfg.lr) if cfg.optimizer == "adam" else Sgd(lr=cfg.lr)
    control = ControlPolicySpec(cfg.control)
    l_cap = 2 * corpus.max_length + 2
    n = len(corpus)
    metrics: list[EpochMetrics] = []

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lam, alpha, tau = cfg.weights_for_epoch(epoch)
        order = rng.permutation(n)
        sums = {"total": 0.0, "distill": 0.0, "teacher_nll": 0.0, "kl": 0.0}
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch = [corpus.sequences[i] for i in idx]
            eps = rng.standard_normal((len(batch), cfg.d_z))
            loss, breakdowns = surrogate_tensors(
                model,
                batch,
                eps,
                lam,
                alpha,
                tau,
                control,
                cfg.oracle_temperature,
                rng,
                corpus.vocab,
                l_cap,
            )
            if not np.isfinite(loss.data):
                bad = [int(idx[i]) for i, b in enumerate(breakdowns) if not np.isfinite(b.total)]
                raise NonFiniteLoss(f"non-finite loss at corpus indices {bad} (epoch {epoch})")
            ad.zero_grads(params)
            ad.backward(loss)
            opt.step(params)
            for b in breakdowns:
                sums["total"] += b.total
                sums["distill"] += b.distill_raw
                sums["teacher_nll"] += b.teacher_nll_raw
                sums["kl"] += b.kl_raw
        lev_d = greedy_reconstruction_lev_d(model, corpus.sequences, l_cap)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                total=sums["total"] / n,
                distill=sums["distill"] / n,
                teacher_nll=sums["teacher_nll"] / n,
                kl=None if cfg.method == "lm" else sums["kl"] / n,
                lev_d=lev_d,
                seconds=time.perf_counter() - t0,
            )
        )

    ckpt = checkpoint_from_model(
        model,
        cfg.method,
        cfg.to_json_dict(),
        corpus.vocab,
        epoch=cfg.epochs,
        rng_state=rng.bit_generator.state,
    )
    return ckpt, metrics


# -- random hyperparameter search -------------------------------------------------

LOG_UNIFORM_FIELDS = {"lr", "lam", "alpha", "tau", "beta"}
INT_FIELDS = {"m_period", "d_z", "d_h", "d_emb", "batch_size", "epochs"}


def sample_search_config(base: TrainConfig, search: dict, rng: np.random.Generator) -> TrainConfig:
    kwargs = asdict(base)
    for json_key, spec in search.items():
        if json_key not in CONFIG_JSON_KEYS:
            raise ConfigInvalid(f"unknown search key {json_key!r}")
        attr = CONFIG_JSON_KEYS[json_key]
        if "values" in spec:
            kwargs[attr] = spec["values"][int(rng.integers(len(spec["values"])))]
        elif attr in INT_FIELDS:
            kwargs[attr] = int(rng.integers(int(spec["low"]), int(spec["high"]) + 1))
        elif attr in LOG_UNIFORM_FIELDS:
            lo, hi = np.log(spec["low"]), np.log(spec["high"])
            kwargs[attr] = float(np.exp(rng.uniform(lo, hi)))
        else:
            kwargs[attr] = float(rng.uniform(spec["low"], spec["high"]))
    cfg = TrainConfig(**kwargs)
    cfg.validate()
    return cfg


def validation_score(model: SequenceModel, cfg: TrainConfig, corpus: Corpus,
                     val_idx: np.ndarray, objective: str) -> float:
    val_seqs = [corpus.sequences[i] for i in val_idx]
    l_cap = 2 * corpus.max_length + 2
    if objective == "lev_d":
        return greedy_reconstruction_lev_d(model, val_seqs, l_cap)
    lam, alpha, tau = cfg.weights_for_epoch(max(cfg.epochs - 1, 0))
    rng = np.random.default_rng(cfg.seed + 1)
    eps = rng.standard_normal((len(val_seqs), cfg.d_z))
    with ad.no_grad():
        _, breakdowns = surrogate_tensors(
            model, val_seqs, eps, lam, alpha, tau,
            ControlPolicySpec(cfg.control), cfg.oracle_temperature, rng,
            corpus.vocab, l_cap,
        )
    if objective == "total":
        return float(np.mean([b.total for b in breakdowns]))
    if objective == "neg_elbo":
        return float(np.mean([b.teacher_nll_raw + b.kl_raw for b in breakdowns]))
    raise ConfigInvalid(f"unknown objective {objective!r}")


def random_search(
    space: dict,
    budget: int,
    objective: str,
    corpus: Corpus,
    seed: int,
) -> list[tuple[TrainConfig, float]]:
    """Sample `budget` configs, train each, rank by validation objective (ascending)."""
    if budget < 1:
        raise ConfigInvalid("budget must be >= 1")
    base = config_from_json_dict(space.get("base", {}))
    search = space.get("search", {})
    rng = np.random.default_rng(seed)
    val = validation_mask(corpus.sequences)
    val_idx = np.flatnonzero(val)
    train_idx = np.flatnonzero(~val)
    if len(val_idx) == 0 or len(train_idx) == 0:
        raise ConfigInvalid("corpus too small for a validation split")
    train_corpus = Corpus(
        sequences=[corpus.sequences[i] for i in train_idx],
        vocab=corpus.vocab,
    )
    results = []
    for trial in range(budget):
        cfg = sample_search_config(base, search, rng)
        ckpt, _ = train(cfg, train_corpus)
        from .checkpoint import model_from_checkpoint

        model = model_from_checkpoint(ckpt)
        score = validation_score(model, cfg, corpus, val_idx, objective)
        results.append((cfg, float(score)))
    return sorted(results, key=lambda cs: cs[1])


# -- naive-Hamming pathology demonstration ----------------------------------------

def position_costs(dataset: Sequence[TokenSeq], vocab: Vocabulary) -> np.ndarray:
    """c_i(v) = |D| - count of content token v at position i; (L, V_content)."""
    lengths = {len(x) for x in dataset}
    if len(lengths) != 1:
        raise ConfigInvalid("naive-Hamming training needs a fixed-length dataset")
    (length,) = lengths
    counts = np.zeros((length, vocab.content_size))
    for x in dataset:
        for i, tok in enumerate(x):
            counts[i, tok - N_RESERVED] += 1
    return len(dataset) - counts


def train_naive_hamming(
    dataset: Sequence[TokenSeq],
    vocab: Vocabulary,
    tau: float,
    steps: int,
    seed: int,
    d_h: int = 24,
    d_emb: int = 12,
    d_z: int = 1,
    batch_size: int = 32,
    lr: float = 5e-3,
) -> SequenceModel:
    """Fit an autoregressive model to the naive Hamming bound objective.

    Per sampled prefix, minimizes the exact expected position cost plus the
    negative conditional entropy: sum_v p(v|prefix) c_i(v)/tau - H(p). The
    optimum is the position-wise Gibbs marginal regardless of the prefix,
    which is the pathology this trainer exists to exhibit.
    """
    rng = np.random.default_rng(seed)
    costs = position_costs(dataset, vocab)
    length = costs.shape[0]
    dims = ModelDims(vocab_size=vocab.size, d_emb=d_emb, d_h=d_h, d_z=d_z)
    model = init_model(dims, rng, with_encoder=False)
    gen = model.generator
    params = model.named_parameters()
    opt = Adam(lr=lr)
    mask = legal_action_mask(vocab.size).copy()
    mask[EOS] = -1e30  # fixed-length regime: content tokens only

    for _ in range(steps):
        z = Tensor(np.zeros((batch_size, d_z)))
        state = init_state(gen, z)
        tokens_in = np.full(batch_size, BOS, dtype=np.int64)
        loss = None
        for pos in range(length):
            state, logits = step(gen, state, tokens_in)
            logp = ad.log_softmax(logits, mask)
            p = ad.exp(logp)
            cost_row = np.zeros(vocab.size)
            cost_row[N_RESERVED:] = costs[pos] / tau
            step_loss = ad.tsum(p * Tensor(cost_row), axis=-1) + ad.tsum(p * logp, axis=-1)
            loss = step_loss if loss is None else loss + step_loss
            probs = p.data.copy()
            cdf = probs.cumsum(axis=1)
            u = rng.random(batch_size)
            tokens_in = np.minimum((cdf < u[:, None]).sum(axis=1), vocab.size - 1)
        ad.zero_grads(params)
        ad.backward(ad.tsum(loss))
        opt.step(params)
    return model


def conditional_distribution(
    model: SequenceModel, prefix: TokenSeq, vocab: Vocabulary
) -> np.ndarray:
    """Model's content-token distribution after consuming prefix (EOS masked)."""
    mask = legal_action_mask(vocab.size).copy()
    mask[EOS] = -1e30
    with ad.no_grad():
        state = init_state(model.generator, Tensor(np.zeros((1, model.dims.d_z))))
        tokens = [BOS] + list(prefix)
        for tok in tokens[:-1]:
            state, _ = step(model.generator, state, np.array([tok]))
        state, logits = step(model.generator, state, np.array([tokens[-1]]))
        p = np.exp(ad.log_softmax(logits, mask).data[0])
    return p[N_RESERVED:]
