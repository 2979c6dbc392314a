"""Corpus ingestion and the synthetic latent-class generator.

The synthetic corpus is built so that the class of a sentence is recoverable
from the whole sentence but not from a short prefix (all templates share the
same opening tokens), which makes posterior collapse a measurable event: a
collapsed model cannot tell classes apart, a latent-using model can.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCorpus, IoError, MalformedLabel, SpecInvalid
from .sequences import TokenSeq, Vocabulary

UNK_TOKEN = "<unk>"


@dataclass
class PairRecord:
    a: int
    b: int
    label: int


@dataclass
class Corpus:
    sequences: list[TokenSeq]
    vocab: Vocabulary
    labels: list[int] | None = None
    label_names: list[str] | None = None
    pairs: list[PairRecord] = field(default_factory=list)
    pair_label_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def max_length(self) -> int:
        return max(len(s) for s in self.sequences)


def load_corpus(path: str | Path, labels_path: str | Path | None = None,
                min_count: int = 1) -> Corpus:
    """One whitespace-tokenized sentence per line; blank lines are skipped.

    Vocabulary ids are stable across reloads: reserved ids, then <unk>,
    then corpus tokens sorted by (-frequency, token). Tokens rarer than
    min_count map to <unk>. Labels come from a TSV of `line_index<TAB>label`.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read corpus {path}: {e}") from e
    lines = [ln.split() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise EmptyCorpus(f"no sentences in {path}")

    freq = Counter(tok for ln in lines for tok in ln)
    kept = sorted(
        (tok for tok, c in freq.items() if c >= min_count and tok != UNK_TOKEN),
        key=lambda t: (-freq[t], t),
    )
    vocab = Vocabulary([UNK_TOKEN] + kept)
    unk = vocab.id_of(UNK_TOKEN)
    sequences = [tuple(vocab.id_of(t) if t in vocab else unk for t in ln) for ln in lines]

    labels = None
    label_names = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        try:
            raw = labels_path.read_text(encoding="utf-8")
        except OSError as e:
            raise IoError(f"cannot read labels {labels_path}: {e}") from e
        by_index: dict[int, str] = {}
        for lineno, ln in enumerate(raw.splitlines(), 1):
            if not ln.strip():
                continue
            parts = ln.split("\t")
            if len(parts) != 2:
                raise MalformedLabel(f"{labels_path}:{lineno}: expected index<TAB>label")
            try:
                idx = int(parts[0])
            except ValueError as e:
                raise MalformedLabel(f"{labels_path}:{lineno}: bad index {parts[0]!r}") from e
            if not 0 <= idx < len(sequences):
                raise MalformedLabel(f"{labels_path}:{lineno}: index {idx} out of range")
            by_index[idx] = parts[1].strip()
        if len(by_index) != len(sequences):
            raise MalformedLabel(
                f"{labels_path}: {len(by_index)} labels for {len(sequences)} sentences"
            )
        label_names = sorted(set(by_index.values()))
        name_to_id = {n: i for i, n in enumerate(label_names)}
        labels = [name_to_id[by_index[i]] for i in range(len(sequences))]

    return Corpus(sequences=sequences, vocab=vocab, labels=labels, label_names=label_names)


@dataclass
class SyntheticSpec:
    n_classes: int
    templates_per_class: int
    noise_rate: float
    n_sentences: int
    seed: int
    template_length: int = 12
    shared_prefix_length: int = 3
    pool_size: int = 16
    n_pairs: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise SpecInvalid("need at least 2 classes")
        if self.templates_per_class < 1:
            raise SpecInvalid("need at least 1 template per class")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise SpecInvalid("noise_rate must be in [0, 1]")
        if self.n_sentences < self.n_classes:
            raise SpecInvalid("need at least one sentence per class")
        if self.shared_prefix_length >= self.template_length:
            raise SpecInvalid("shared prefix must be shorter than the template")
        if self.pool_size < 2:
            raise SpecInvalid("token pool must have at least 2 tokens")


PAIR_LABELS = ["same-class", "different-class", "template-overlap"]


def generate_synthetic_corpus(spec: SyntheticSpec) -> Corpus:
    """Class-templated sentences with position-level substitution noise.

    All templates open with one shared prefix, so no short prefix identifies
    the class. With >= 2 templates per class, template #1 of each class
    shares the first half of its body with template #1 of the next class;
    those cross-class pairs carry the 'template-overlap' pair label.
    """
    rng = np.random.default_rng(spec.seed)
    pool = [f"w{i:02d}" for i in range(spec.pool_size)]
    vocab = Vocabulary(pool)
    pool_ids = np.array(sorted(vocab.id_of(t) for t in pool), dtype=np.int64)

    body_len = spec.template_length - spec.shared_prefix_length
    prefix = rng.choice(pool_ids, size=spec.shared_prefix_length)
    templates: list[list[np.ndarray]] = []
    for _ in range(spec.n_classes):
        templates.append(
            [rng.choice(pool_ids, size=body_len) for _ in range(spec.templates_per_class)]
        )
    overlap_partner: dict[tuple[int, int], tuple[int, int]] = {}
    if spec.templates_per_class >= 2:
        half = body_len // 2
        for c in range(spec.n_classes):
            nxt = (c + 1) % spec.n_classes
            templates[nxt][1][:half] = templates[c][1][:half]
            overlap_partner[(c, 1)] = (nxt, 1)
            overlap_partner[(nxt, 1)] = (c, 1)

    sequences: list[TokenSeq] = []
    labels: list[int] = []
    template_ids: list[tuple[int, int]] = []
    for i in range(spec.n_sentences):
        c = i % spec.n_classes
        t = int(rng.integers(spec.templates_per_class))
        body = templates[c][t].copy()
        noise_mask = rng.random(body_len) < spec.noise_rate
        body[noise_mask] = rng.choice(pool_ids, size=int(noise_mask.sum()))
        sequences.append(tuple(prefix.tolist()) + tuple(body.tolist()))
        labels.append(c)
        template_ids.append((c, t))
    order = rng.permutation(spec.n_sentences)
    sequences = [sequences[i] for i in order]
    labels = [labels[i] for i in order]
    template_ids = [template_ids[i] for i in order]

    pairs: list[PairRecord] = []
    if spec.n_pairs > 0:
        by_class: dict[int, list[int]] = {}
        by_template: dict[tuple[int, int], list[int]] = {}
        for i, (c, t) in enumerate(template_ids):
            by_class.setdefault(c, []).append(i)
            by_template.setdefault((c, t), []).append(i)
        kinds = [0, 1, 2] if overlap_partner else [0, 1]
        for j in range(spec.n_pairs):
            kind = kinds[j % len(kinds)]
            if kind == 0:
                c = int(rng.integers(spec.n_classes))
                a, b = rng.choice(by_class[c], size=2, replace=True)
            elif kind == 1:
                c1, c2 = rng.choice(spec.n_classes, size=2, replace=False)
                a = int(rng.choice(by_class[c1]))
                b = int(rng.choice(by_class[c2]))
                for _ in range(20):
                    if overlap_partner.get(template_ids[a]) != template_ids[b]:
                        break
                    b = int(rng.choice(by_class[c2]))
            else:
                key = (int(rng.integers(spec.n_classes)), 1)
                partner = overlap_partner[key]
                a = int(rng.choice(by_template[key]))
                b = int(rng.choice(by_template[partner]))
            pairs.append(PairRecord(a=int(a), b=int(b), label=kind))

    return Corpus(
        sequences=sequences,
        vocab=vocab,
        labels=labels,
        label_names=[f"class{c}" for c in range(spec.n_classes)],
        pairs=pairs,
        pair_label_names=PAIR_LABELS[: (3 if overlap_partner else 2)] if pairs else [],
    )


def validation_mask(sequences: list[TokenSeq], fraction_denominator: int = 10) -> np.ndarray:
    """Deterministic content-hash split: True marks validation rows (~10%)."""
    import hashlib

    out = np.zeros(len(sequences), dtype=bool)
    for i, s in enumerate(sequences):
        h = hashlib.sha256(",".join(map(str, s)).encode()).digest()
        out[i] = h[0] % fraction_denominator == 0
    return out
