"""Command-line surface: synth / train / eval-bli / eval-sim / induce.

Every command writes its artifacts into ``--out`` together with a flat
key=value run manifest recording the resolved configuration, input digests,
seed, artifact paths, and timings. Re-running ``train`` with
``--from-manifest`` reproduces the original outputs bit-for-bit (timestamps
live only in the manifest).

Exit codes: 0 success; 1 parse or I/O failure; 2 training diverged;
3 zero evaluable items. Failures emit one machine-readable line on stderr:
``error: <category>: <message>``.
"""
from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .embeddings import (
    EmbeddingSet,
    ParseError,
    l2_normalize,
    load_counts,
    load_embeddings,
    load_lexicon,
    load_sim_dataset,
    reweight,
    save_embeddings,
    uniform_weights,
    weights_from_counts,
)
from .evaluate import (
    EvaluationError,
    accuracy_at_k,
    synth_pair,
    topk_by_cosine,
    word_similarity_eval,
)
from .sinkhorn import SinkhornConfig, SinkhornError
from .transfer import (
    LinearMap,
    TrainConfig,
    TrainingDiverged,
    apply_map,
    load_map,
    save_map,
    train,
)
from .wgan import WganConfig, pretrain

EXIT_OK = 0
EXIT_IO = 1
EXIT_DIVERGED = 2
EXIT_NO_ITEMS = 3


def _fail(category: str, message: str) -> None:
    print(f"error: {category}: {message}", file=sys.stderr)


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: Path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key] = value
    return out


def _load_normalized(path: str, max_vocab: int, weighting: str, zipf_s: float,
                     counts_path: str | None) -> EmbeddingSet:
    e = load_embeddings(path, max_vocab=max_vocab or None, zipf_exponent=zipf_s)
    if weighting == "uniform":
        e = reweight(e, uniform_weights(len(e)))
    elif weighting == "counts":
        if counts_path is None:
            raise ParseError("weighting 'counts' requires a counts file")
        e = reweight(e, weights_from_counts(e.words, load_counts(counts_path)))
    return l2_normalize(e)


def _add_embedding_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--src", required=True, help="source embedding file")
    p.add_argument("--tgt", required=True, help="target embedding file")
    p.add_argument("--max-vocab", type=int, default=0,
                   help="load only the first N words per side (0 = all)")
    p.add_argument("--weighting", choices=("zipf", "uniform", "counts"), default="zipf",
                   help="marginal weights over the vocabulary")
    p.add_argument("--zipf-exponent", type=float, default=1.0,
                   help="rank exponent for zipf weighting")
    p.add_argument("--src-counts", default=None, help="TSV word counts for --weighting counts")
    p.add_argument("--tgt-counts", default=None, help="TSV word counts for --weighting counts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otalign",
        description="Unsupervised alignment of word-embedding spaces via entropic optimal transport",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn bidirectional maps between two embedding spaces")
    _add_embedding_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--init", choices=("identity", "wgan"), default="wgan",
                   help="initialization: adversarial pretraining (default) or identity maps")
    p.add_argument("--steps", type=int, default=2000, help="entropic-phase training steps")
    p.add_argument("--beta", type=float, default=0.1, help="round-trip loss weight")
    p.add_argument("--lam", type=float, default=10.0, help="entropic regularization multiplier")
    p.add_argument("--sinkhorn-iterations", type=int, default=20, help="scaling iterations")
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--adam-beta1", type=float, default=0.9)
    p.add_argument("--adam-beta2", type=float, default=0.999)
    p.add_argument("--adam-eps", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-vocab", type=int, default=10000,
                   help="train on the N most frequent words per side (0 = full vocabulary)")
    p.add_argument("--batch-marginals", choices=("uniform", "frequency"), default="uniform")
    p.add_argument("--wgan-steps", type=int, default=3000)
    p.add_argument("--wgan-critic-steps", type=int, default=5)
    p.add_argument("--wgan-gp", type=float, default=10.0)
    p.add_argument("--wgan-learning-rate", type=float, default=1e-4)
    p.add_argument("--wgan-batch-size", type=int, default=512)
    p.add_argument("--wgan-hidden", type=int, default=500)
    p.add_argument("--wgan-no-back-translation", action="store_true",
                   help="drop the round-trip term during adversarial pretraining")
    p.add_argument("--from-manifest", default=None,
                   help="re-run a previous training from its manifest (other flags ignored)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-bli", help="lexicon-induction accuracy@k for a trained map")
    _add_embedding_flags(p)
    p.add_argument("--map", required=True, help="map checkpoint")
    p.add_argument("--lexicon", required=True, help="gold lexicon TSV")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--candidate-limit", type=int, default=0,
                   help="restrict retrieval to the N most frequent target words (0 = all)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval_bli)

    p = sub.add_parser("eval-sim", help="cross-lingual word-similarity correlation")
    _add_embedding_flags(p)
    p.add_argument("--map", required=True, help="map checkpoint")
    p.add_argument("--simfile", required=True, help="similarity dataset TSV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval_sim)

    p = sub.add_parser("induce", help="retrieve top-k translations for query words")
    _add_embedding_flags(p)
    p.add_argument("--map", required=True, help="map checkpoint")
    p.add_argument("--queries", required=True, help="query words, one per line")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--candidate-limit", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("synth", help="generate an aligned synthetic benchmark pair")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    return parser


def _train_flags_from_manifest(args: argparse.Namespace) -> argparse.Namespace:
    stored = read_manifest(args.from_manifest)
    spec = {
        "src": str, "tgt": str, "max_vocab": int, "weighting": str,
        "zipf_exponent": float, "src_counts": str, "tgt_counts": str,
        "init": str, "steps": int, "beta": float, "lam": float,
        "sinkhorn_iterations": int, "batch_size": int, "learning_rate": float,
        "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
        "seed": int, "train_vocab": int, "batch_marginals": str,
        "wgan_steps": int, "wgan_critic_steps": int, "wgan_gp": float,
        "wgan_learning_rate": float, "wgan_batch_size": int, "wgan_hidden": int,
        "wgan_no_back_translation": lambda s: s == "True",
    }
    for key, cast in spec.items():
        if key in stored:
            value = stored[key]
            setattr(args, key, None if value == "None" else cast(value))
    return args


def cmd_train(args: argparse.Namespace) -> int:
    if args.from_manifest:
        try:
            args = _train_flags_from_manifest(args)
        except OSError as exc:
            _fail("io", str(exc))
            return EXIT_IO
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        src = _load_normalized(args.src, args.max_vocab, args.weighting,
                               args.zipf_exponent, args.src_counts)
        tgt = _load_normalized(args.tgt, args.max_vocab, args.weighting,
                               args.zipf_exponent, args.tgt_counts)
    except (ParseError, ValueError) as exc:
        _fail("parse", str(exc))
        return EXIT_IO
    except OSError as exc:
        _fail("io", str(exc))
        return EXIT_IO

    tcfg = TrainConfig(
        steps=args.steps,
        beta=args.beta,
        sinkhorn=SinkhornConfig(lam=args.lam, iterations=args.sinkhorn_iterations),
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        adam_beta1=args.adam_beta1,
        adam_beta2=args.adam_beta2,
        adam_eps=args.adam_eps,
        seed=args.seed,
        train_vocab=args.train_vocab,
        batch_marginals=args.batch_marginals,
    )
    wcfg = WganConfig(
        steps=args.wgan_steps,
        critic_steps=args.wgan_critic_steps,
        gp=args.wgan_gp,
        learning_rate=args.wgan_learning_rate,
        batch_size=args.wgan_batch_size,
        hidden=args.wgan_hidden,
        seed=args.seed,
        beta=args.beta,
        use_back_translation=not args.wgan_no_back_translation,
    )

    try:
        if args.init == "wgan":
            init = pretrain(src, tgt, wcfg)
        else:
            init = (LinearMap.identity(src.dim), LinearMap.identity(src.dim))
        fwd, bwd, report = train(src, tgt, tcfg, init)
    except TrainingDiverged as exc:
        _fail("diverged", str(exc))
        return EXIT_DIVERGED
    except SinkhornError as exc:
        _fail("numeric", str(exc))
        return EXIT_DIVERGED

    fwd_path = out / "G.ckpt"
    bwd_path = out / "F.ckpt"
    best_fwd_path = out / "G_best.ckpt"
    best_bwd_path = out / "F_best.ckpt"
    loss_path = out / "loss.tsv"
    save_map(fwd, fwd_path)
    save_map(bwd, bwd_path)
    save_map(report.best_fwd, best_fwd_path)
    save_map(report.best_bwd, best_bwd_path)
    with open(loss_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step\ttotal\ttransport_fwd\ttransport_bwd\tround_trip\n")
        for rec in report.records:
            fh.write(
                f"{rec.step}\t{rec.total!r}\t{rec.transport_fwd!r}"
                f"\t{rec.transport_bwd!r}\t{rec.round_trip!r}\n"
            )

    manifest = {
        "command": "train",
        "version": __version__,
        "src": args.src,
        "tgt": args.tgt,
        "src_sha256": _sha256(args.src),
        "tgt_sha256": _sha256(args.tgt),
        "max_vocab": args.max_vocab,
        "weighting": args.weighting,
        "zipf_exponent": args.zipf_exponent,
        "src_counts": args.src_counts,
        "tgt_counts": args.tgt_counts,
        "init": args.init,
        "steps": tcfg.steps,
        "beta": tcfg.beta,
        "lam": tcfg.sinkhorn.lam,
        "sinkhorn_iterations": tcfg.sinkhorn.iterations,
        "batch_size": tcfg.batch_size,
        "learning_rate": tcfg.learning_rate,
        "adam_beta1": tcfg.adam_beta1,
        "adam_beta2": tcfg.adam_beta2,
        "adam_eps": tcfg.adam_eps,
        "seed": tcfg.seed,
        "train_vocab": tcfg.train_vocab,
        "batch_marginals": tcfg.batch_marginals,
        "wgan_steps": wcfg.steps,
        "wgan_critic_steps": wcfg.critic_steps,
        "wgan_gp": wcfg.gp,
        "wgan_learning_rate": wcfg.learning_rate,
        "wgan_batch_size": wcfg.batch_size,
        "wgan_hidden": wcfg.hidden,
        "wgan_no_back_translation": not wcfg.use_back_translation,
        "artifact_fwd": str(fwd_path),
        "artifact_bwd": str(bwd_path),
        "artifact_best_fwd": str(best_fwd_path),
        "artifact_best_bwd": str(best_bwd_path),
        "artifact_loss": str(loss_path),
        "best_step": report.best_step,
        "train_seconds": repr(report.wall_clock),
        "total_seconds": repr(time.perf_counter() - started),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    write_manifest(out / "manifest.txt", manifest)
    return EXIT_OK


def _write_report(out: Path, rows: list[tuple[str, str, str]]) -> Path:
    path = out / "report.tsv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric\tvalue\tmetadata\n")
        for name, value, meta in rows:
            fh.write(f"{name}\t{value}\t{meta}\n")
    return path


def _eval_common(args: argparse.Namespace):
    src = _load_normalized(args.src, args.max_vocab, args.weighting,
                           args.zipf_exponent, args.src_counts)
    tgt = _load_normalized(args.tgt, args.max_vocab, args.weighting,
                           args.zipf_exponent, args.tgt_counts)
    mapping = load_map(args.map)
    return src, tgt, mapping


def cmd_eval_bli(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        src, tgt, mapping = _eval_common(args)
        lex = load_lexicon(args.lexicon)
    except (ParseError, ValueError) as exc:
        _fail("parse", str(exc))
        return EXIT_IO
    except OSError as exc:
        _fail("io", str(exc))
        return EXIT_IO
    try:
        result = accuracy_at_k(
            mapping, src, tgt, lex, args.k,
            candidate_limit=args.candidate_limit or None,
        )
    except EvaluationError as exc:
        _fail("no-evaluable-items", str(exc))
        return EXIT_NO_ITEMS
    report = _write_report(out, [(
        f"accuracy@{args.k}",
        repr(result.accuracy),
        f"evaluated={result.evaluated} skipped={result.skipped}",
    )])
    write_manifest(out / "manifest.txt", {
        "command": "eval-bli",
        "version": __version__,
        "src": args.src, "tgt": args.tgt, "map": args.map, "lexicon": args.lexicon,
        "src_sha256": _sha256(args.src), "tgt_sha256": _sha256(args.tgt),
        "map_sha256": _sha256(args.map), "lexicon_sha256": _sha256(args.lexicon),
        "max_vocab": args.max_vocab, "weighting": args.weighting,
        "k": args.k, "candidate_limit": args.candidate_limit,
        "accuracy": repr(result.accuracy),
        "evaluated": result.evaluated, "skipped": result.skipped,
        "artifact_report": str(report),
        "total_seconds": repr(time.perf_counter() - started),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })
    return EXIT_OK


def cmd_eval_sim(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        src, tgt, mapping = _eval_common(args)
        ds = load_sim_dataset(args.simfile)
    except (ParseError, ValueError) as exc:
        _fail("parse", str(exc))
        return EXIT_IO
    except OSError as exc:
        _fail("io", str(exc))
        return EXIT_IO
    try:
        result = word_similarity_eval(mapping, src, tgt, ds)
    except EvaluationError as exc:
        _fail("no-evaluable-items", str(exc))
        return EXIT_NO_ITEMS
    report = _write_report(out, [(
        "pearson", repr(result.pearson), f"coverage={result.coverage!r}",
    )])
    write_manifest(out / "manifest.txt", {
        "command": "eval-sim",
        "version": __version__,
        "src": args.src, "tgt": args.tgt, "map": args.map, "simfile": args.simfile,
        "src_sha256": _sha256(args.src), "tgt_sha256": _sha256(args.tgt),
        "map_sha256": _sha256(args.map), "simfile_sha256": _sha256(args.simfile),
        "max_vocab": args.max_vocab, "weighting": args.weighting,
        "pearson": repr(result.pearson), "coverage": repr(result.coverage),
        "artifact_report": str(report),
        "total_seconds": repr(time.perf_counter() - started),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })
    return EXIT_OK


def cmd_induce(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        src, tgt, mapping = _eval_common(args)
        with open(args.queries, encoding="utf-8") as fh:
            queries = [line.rstrip("\n").rstrip("\r") for line in fh if line.strip()]
    except (ParseError, ValueError) as exc:
        _fail("parse", str(exc))
        return EXIT_IO
    except OSError as exc:
        _fail("io", str(exc))
        return EXIT_IO

    space = tgt
    if args.candidate_limit:
        from .embeddings import truncate

        space = truncate(tgt, args.candidate_limit)
    path = out / "inductions.tsv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query\trank\tcandidate\tcosine\n")
        for q in queries:
            i = src.index.get(q)
            if i is None:
                fh.write(f"{q}\tOOV\t\t\n")
                continue
            z = apply_map(mapping, src.vectors[i][None, :])[0]
            top = topk_by_cosine(z, space, args.k)
            zn = z / np.linalg.norm(z)
            for rank, j in enumerate(top, start=1):
                cos = float(zn @ space.vectors[j])
                fh.write(f"{q}\t{rank}\t{space.words[j]}\t{cos!r}\n")
    write_manifest(out / "manifest.txt", {
        "command": "induce",
        "version": __version__,
        "src": args.src, "tgt": args.tgt, "map": args.map, "queries": args.queries,
        "src_sha256": _sha256(args.src), "tgt_sha256": _sha256(args.tgt),
        "map_sha256": _sha256(args.map), "queries_sha256": _sha256(args.queries),
        "max_vocab": args.max_vocab, "weighting": args.weighting,
        "k": args.k, "candidate_limit": args.candidate_limit,
        "artifact_inductions": str(path),
        "total_seconds": repr(time.perf_counter() - started),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        bench = synth_pair(args.n, args.d, args.noise, args.seed)
        src_path = out / "src.vec"
        tgt_path = out / "tgt.vec"
        lex_path = out / "lexicon.tsv"
        gold_path = out / "gold.ckpt"
        save_embeddings(bench.src, src_path)
        save_embeddings(bench.tgt, tgt_path)
        with open(lex_path, "w", encoding="utf-8", newline="\n") as fh:
            for s, t in bench.lexicon.pairs:
                fh.write(f"{s}\t{t}\n")
        save_map(bench.gold, gold_path)
    except OSError as exc:
        _fail("io", str(exc))
        return EXIT_IO
    write_manifest(out / "manifest.txt", {
        "command": "synth",
        "version": __version__,
        "n": args.n, "d": args.d, "noise": repr(args.noise), "seed": args.seed,
        "artifact_src": str(src_path), "artifact_tgt": str(tgt_path),
        "artifact_lexicon": str(lex_path), "artifact_gold": str(gold_path),
        "total_seconds": repr(time.perf_counter() - started),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
