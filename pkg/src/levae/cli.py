"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .corpus import generate_synthetic_corpus, load_corpus, SyntheticSpec
from .errors import ConfigInvalid, IoError, LevaeError, VocabHashMismatch
from .evaluation import (
    evaluate,
    paired_features,
    posterior_means,
    positionwise_accuracy,
    probe_accuracy,
    semi_supervised_curve,
    train_linear_probe,
)
from .kde import KdeConfig, build_kde_table, kde_log_probs_enumerated, reward_grid_demo
from .models import decode
from .oracle import oc_policy
from .sequences import EOS, Vocabulary
from .training import load_config, random_search, train, write_metrics_csv

EOS_SURFACE = "</s>"


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    corpus = load_corpus(args.corpus, labels_path=args.labels)
    ckpt, metrics = train(cfg, corpus)
    save_checkpoint(ckpt, args.out)
    metrics_path = args.metrics or f"{args.out}.metrics.csv"
    write_metrics_csv(metrics_path, metrics)
    print(f"saved checkpoint to {args.out}, metrics to {metrics_path}")
    return 0


def _load_model_for(args, corpus):
    ckpt = load_checkpoint(args.ckpt)
    if corpus is not None and ckpt.vocab_hash != corpus.vocab.content_hash():
        raise VocabHashMismatch(
            "checkpoint vocabulary does not match the corpus vocabulary"
        )
    return ckpt, model_from_checkpoint(ckpt)


def _cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    ckpt, model = _load_model_for(args, corpus)
    rng = np.random.default_rng(args.seed)
    report = evaluate(
        model,
        corpus.sequences,
        rng,
        n_is_samples=args.is_samples,
        is_limit=args.is_limit,
    )
    l_cap = 2 * corpus.max_length + 2
    lines = ["metric,value"]
    for name in ("lev_d", "recon_nll", "kl", "neg_elbo", "nll_is", "nll_is_stderr", "ppl"):
        v = getattr(report, name)
        lines.append(f"{name},{'' if v is None else repr(float(v))}")
    if model.has_encoder:
        acc, aligned, counts = positionwise_accuracy(model, corpus.sequences, l_cap)
        lines.append("position,accuracy,count,aligned_accuracy")
        for i in range(len(acc)):
            lines.append(f"{i},{acc[i]!r},{int(counts[i])},{aligned[i]!r}")
    Path(args.report).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote report to {args.report}")
    return 0


def _cmd_sample(args) -> int:
    ckpt, model = _load_model_for(args, None)
    rng = np.random.default_rng(args.seed)
    d_z = model.dims.d_z
    z = np.zeros((args.n, d_z)) if ckpt.method == "lm" else rng.standard_normal((args.n, d_z))
    mode = "greedy" if args.greedy else "sample"
    out = decode(model.generator, z, mode=mode, rng=rng, l_cap=args.l_cap)
    for seq in out.sequences:
        print(" ".join(ckpt.vocab.token_of(t) for t in seq))
    return 0


def _cmd_oracle(args) -> int:
    target_words = args.target.split()
    generated_words = args.generated.split()
    if not target_words:
        raise ConfigInvalid("--target must contain at least one token")
    tokens = sorted(set(target_words) | set(generated_words))
    vocab = Vocabulary(tokens)
    target = vocab.encode(target_words)
    generated = vocab.encode(generated_words)

    sets = []
    for t in range(len(generated) + 1):
        res = oc_policy(generated[:t], target, vocab)
        names = sorted(
            EOS_SURFACE if i == EOS else vocab.token_of(i) for i in res.optimal_set
        )
        sets.append("{" + ",".join(names) + "}")
        if res.eos_only:
            break

    rows = [
        ["target:"] + ["<s>"] + list(target_words) + [EOS_SURFACE],
        ["generated:"] + ["<s>"] + list(generated_words) + [EOS_SURFACE],
        ["oc:"] + [""] + sets,
    ]
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(max(map(len, rows)))]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return 0


def _cmd_kde(args) -> int:
    corpus = load_corpus(args.corpus)
    cfg = KdeConfig(
        tau=args.tau,
        dataset=corpus.sequences,
        vocab=corpus.vocab,
        l_max=args.lmax,
        tail_tolerance=args.tail_tol,
    )
    table = build_kde_table(cfg)
    print("k,sequence,z_k,tail_bound")
    for k, x_k in enumerate(corpus.sequences):
        text = " ".join(corpus.vocab.token_of(t) for t in x_k)
        print(f"{k},{text},{float(np.exp(table.log_z[k]))!r},{table.tails[k]!r}")
    mass = float(np.exp(kde_log_probs_enumerated(table)).sum())
    print(f"# enumerated sequences: {len(table.sequences)}")
    print(f"# enumerated kde mass: {mass!r}")
    print(f"# max certified tail: {table.tails.max()!r}")
    return 0


def _cmd_bound_demo(args) -> int:
    try:
        rows = [
            tuple(map(float, ln.replace(",", " ").split()))
            for ln in Path(args.points).read_text().splitlines()
            if ln.strip() and not ln.startswith("#") and not ln.lower().startswith("x")
        ]
    except (OSError, ValueError) as e:
        raise IoError(f"cannot parse points file {args.points}: {e}") from e
    if not rows:
        raise IoError(f"no points in {args.points}")
    grid = reward_grid_demo(np.array(rows), tau=args.tau, resolution=args.grid)
    out = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    try:
        out.write("x,y,field_a,field_b\n")
        for i, x in enumerate(grid.xs):
            for j, y in enumerate(grid.ys):
                out.write(f"{x!r},{y!r},{grid.field_mixture[i, j]!r},{grid.field_naive[i, j]!r}\n")
    finally:
        if args.out is not None:
            out.close()
            print(f"wrote grid to {args.out}")
    return 0


def _cmd_probe(args) -> int:
    corpus = load_corpus(args.corpus, labels_path=None if args.paired else args.labels)
    ckpt, model = _load_model_for(args, corpus)
    rng = np.random.default_rng(args.seed)
    mus = posterior_means(model, corpus.sequences)

    if args.paired:
        pairs = _read_pair_labels(args.labels, len(corpus.sequences))
        a_idx = np.array([p[0] for p in pairs])
        b_idx = np.array([p[1] for p in pairs])
        names = sorted(set(p[2] for p in pairs))
        label_ids = {n: i for i, n in enumerate(names)}
        features = paired_features(mus[a_idx], mus[b_idx])
        labels = np.array([label_ids[p[2]] for p in pairs])
    else:
        if corpus.labels is None:
            raise ConfigInvalid("probe needs --labels")
        features = mus
        labels = np.array(corpus.labels)

    split = rng.permutation(len(labels))
    half = len(labels) // 2
    tr, te = split[:half], split[half:]
    fractions = [float(f) for f in args.fractions.split(",")] if args.fractions else [1.0]
    curve = semi_supervised_curve(
        features[tr], labels[tr], features[te], labels[te], fractions, rng, l2=args.l2
    )
    print("fraction,accuracy")
    for f, acc in curve:
        print(f"{f!r},{acc!r}")
    return 0


def _read_pair_labels(path: str, n: int) -> list[tuple[int, int, str]]:
    from .errors import MalformedLabel

    out = []
    for lineno, ln in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 3:
            raise MalformedLabel(f"{path}:{lineno}: expected index_a<TAB>index_b<TAB>label")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError as e:
            raise MalformedLabel(f"{path}:{lineno}: bad pair indices") from e
        if not (0 <= a < n and 0 <= b < n):
            raise MalformedLabel(f"{path}:{lineno}: pair index out of range")
        out.append((a, b, parts[2].strip()))
    if not out:
        raise MalformedLabel(f"{path}: no pair records")
    return out


def _cmd_sweep(args) -> int:
    try:
        space = json.loads(Path(args.space).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigInvalid(f"cannot parse search space {args.space}: {e}") from e
    corpus = load_corpus(args.corpus)
    results = random_search(space, args.budget, args.objective, corpus, args.seed)
    print("rank,score,config")
    for rank, (cfg, score) in enumerate(results):
        print(f"{rank},{score!r},{json.dumps(cfg.to_json_dict(), sort_keys=True)}")
    return 0


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_classes=args.classes,
        templates_per_class=args.templates,
        noise_rate=args.noise,
        n_sentences=args.n,
        seed=args.seed,
        template_length=args.length,
        shared_prefix_length=args.prefix,
        pool_size=args.pool,
    )
    corpus = generate_synthetic_corpus(spec)
    lines = [" ".join(corpus.vocab.token_of(t) for t in s) for s in corpus.sequences]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.labels_out:
        rows = [f"{i}\t{corpus.label_names[c]}" for i, c in enumerate(corpus.labels)]
        Path(args.labels_out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} sentences to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levae", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--corpus", required=True)
    t.add_argument("--labels", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--metrics", default=None)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--is-samples", type=int, default=1000, dest="is_samples")
    e.add_argument("--is-limit", type=int, default=200, dest="is_limit")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("sample", help="sample sequences from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--greedy", action="store_true")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--l-cap", type=int, default=64, dest="l_cap")
    s.set_defaults(func=_cmd_sample)

    o = sub.add_parser("oracle", help="print optimal next tokens per prefix")
    o.add_argument("--target", required=True)
    o.add_argument("--generated", required=True)
    o.set_defaults(func=_cmd_oracle)

    k = sub.add_parser("kde", help="partition functions and normalization report")
    k.add_argument("--corpus", required=True)
    k.add_argument("--tau", type=float, required=True)
    k.add_argument("--lmax", type=int, required=True)
    k.add_argument("--tail-tol", type=float, default=1e-6, dest="tail_tol")
    k.set_defaults(func=_cmd_kde)

    b = sub.add_parser("bound-demo", help="2-D reward grids as CSV")
    b.add_argument("--points", required=True)
    b.add_argument("--tau", type=float, required=True)
    b.add_argument("--grid", type=int, default=200)
    b.add_argument("--out", default=None)
    b.set_defaults(func=_cmd_bound_demo)

    pr = sub.add_parser("probe", help="linear probe on posterior means")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--labels", required=True)
    pr.add_argument("--paired", action="store_true")
    pr.add_argument("--fractions", default=None)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--l2", type=float, default=1e-4)
    pr.set_defaults(func=_cmd_probe)

    sw = sub.add_parser("sweep", help="random hyperparameter search")
    sw.add_argument("--space", required=True)
    sw.add_argument("--budget", type=int, required=True)
    sw.add_argument("--corpus", required=True)
    sw.add_argument("--objective", default="total")
    sw.add_argument("--seed", type=int, default=0)
    sw.set_defaults(func=_cmd_sweep)

    sy = sub.add_parser("synth", help="write a synthetic latent-class corpus")
    sy.add_argument("--out", required=True)
    sy.add_argument("--labels-out", default=None, dest="labels_out")
    sy.add_argument("--classes", type=int, default=4)
    sy.add_argument("--templates", type=int, default=1)
    sy.add_argument("--noise", type=float, default=0.15)
    sy.add_argument("--n", type=int, default=2000)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--length", type=int, default=12)
    sy.add_argument("--prefix", type=int, default=3)
    sy.add_argument("--pool", type=int, default=16)
    sy.set_defaults(func=_cmd_synth)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LevaeError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
