# cli.py → MALDI-TOF generation toolkit entry point
# Usage: python cli.py [--seed N] [--threads N] [--profile PATH] <subcommand> ...
# Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure.

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from core.console import log, warn
from core.context import RunContext, RunProfile
from core.errors import ConfigError, InvalidInputError, MaldiGenError
from models import KernelConfig, PreprocessConfig, RunConfig, ToyCorpusSpec
from modules.classify import augmentation_experiment, save_experiment_reports, substitution_experiment
from modules.corpus import bin_columns, load_corpus_csv, make_toy_corpus, merge_corpora, save_corpus_csv
from modules.maldivae import embed_vae
from modules.model_manager import ModelManager, generated_corpus
from modules.pike import metric_report, save_report_csv
from modules.spectra import preprocess_directory

KINDS = ["vae", "gan", "diffusion", "classifier"]


def read_json(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        value = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read JSON config {path}: {e}") from e
    if not isinstance(value, dict):
        raise ConfigError(f"JSON config {path} must hold an object")
    return value


def build(model_cls, *layers: Dict[str, Any]):
    values: Dict[str, Any] = {}
    for layer in layers:
        values.update({k: v for k, v in layer.items() if v is not None})
    try:
        return model_cls(**values)
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid {model_cls.__name__}: {e}") from e


# Subcommands

def cmd_preprocess(args, ctx: RunContext) -> int:
    cfg = build(PreprocessConfig, ctx.profile.preprocess, read_json(args.config))
    corpus, failures = preprocess_directory(args.input_dir, cfg, ctx.threads)
    save_corpus_csv(corpus, args.out)
    log("cli", f"Wrote {corpus.n} spectra → {args.out}" + (f" ({len(failures)} files skipped)" if failures else ""))
    return 0


def cmd_toy_corpus(args, ctx: RunContext) -> int:
    spec = build(ToyCorpusSpec, ctx.profile.toy_corpus, read_json(args.spec), {"seed": args.seed})
    corpus = make_toy_corpus(spec)
    save_corpus_csv(corpus, args.out)
    log("cli", f"Toy corpus {corpus.class_counts()} × {corpus.dim} bins → {args.out}")
    return 0


def cmd_train(args, ctx: RunContext) -> int:
    manager = ModelManager(ctx.profile)
    cfg = manager.build_config(args.kind, read_json(args.config), args.seed)
    train = load_corpus_csv(args.train)
    val = _align_vocab(load_corpus_csv(args.val), train.vocab)
    model = manager.train(args.kind, train, val, cfg, threads=ctx.threads)
    manager.save(args.kind, model, args.out, train)
    if args.history:
        manager.history_frame(args.kind, model).to_csv(args.history, index=False, float_format="%.9g")
    cost = model.cost
    log("cli", f"Cost: {cost.get('parameters', 0)} parameters, {cost.get('epochs', 0)} epochs, "
               f"{cost.get('train_seconds', 0.0):.1f}s ({cost.get('epoch_seconds', 0.0):.2f}s/epoch), "
               f"best epoch {cost.get('best_epoch', 0)}")
    return 0


def cmd_generate(args, ctx: RunContext) -> int:
    manager = ModelManager(ctx.profile)
    kind, model = manager.load(args.model)
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    if args.class_name not in model.vocab:
        raise InvalidInputError(f"Unknown class '{args.class_name}'; vocab: {model.vocab}")
    started = time.perf_counter()
    spectra = manager.generator_for(kind, model, ctx.threads)(args.class_name, args.count, ctx.seed)
    elapsed = time.perf_counter() - started
    corpus = generated_corpus(spectra, args.class_name, model.vocab, model.mz_min, model.bin_width)
    save_corpus_csv(corpus, args.out)
    per = elapsed / args.count if args.count else 0.0
    log("cli", f"Generated {args.count} '{args.class_name}' spectra in {elapsed:.2f}s ({per:.4f}s each) → {args.out}")
    return 0


def cmd_metrics(args, ctx: RunContext) -> int:
    cfg = build(KernelConfig, ctx.profile.kernel, {"t": args.t})
    real, generated = load_corpus_csv(args.real), load_corpus_csv(args.generated)
    generated = _align_vocab(generated, real.vocab)
    report = metric_report(real, generated, cfg, ctx.threads)
    save_report_csv(report, args.out)
    log("cli", f"Metric report for {len(report.rows)} classes → {args.out}")
    return 0


def _align_vocab(corpus, vocab: List[str]):
    """Re-index a corpus onto the reference vocabulary (generated files list only their own classes)."""
    if corpus.vocab == list(vocab):
        return corpus
    unknown = [name for name in corpus.vocab if name not in vocab]
    if unknown:
        raise InvalidInputError(f"classes {unknown} are absent from the real corpus")
    labels = np.array([list(vocab).index(corpus.vocab[i]) for i in corpus.labels], dtype=np.int64)
    return corpus.model_copy(update={"labels": labels, "vocab": list(vocab)})


def cmd_experiment(args, ctx: RunContext) -> int:
    manager = ModelManager(ctx.profile)
    cfg = manager.build_config("classifier", read_json(args.config), args.seed)
    train, val, test = load_corpus_csv(args.train), load_corpus_csv(args.val), load_corpus_csv(args.test)
    val, test = _align_vocab(val, train.vocab), _align_vocab(test, train.vocab)
    extra = {"ood": _align_vocab(load_corpus_csv(args.ood), train.vocab)} if args.ood else None

    generators = {}
    for path in args.models or []:
        kind, model = manager.load(path)
        if model.vocab != train.vocab:
            raise InvalidInputError(f"model {path} vocab {model.vocab} differs from training vocab {train.vocab}")
        generators[Path(path).stem] = manager.generator_for(kind, model, ctx.threads)

    if args.kind == "substitution":
        results = substitution_experiment(train, val, test, generators, cfg, ctx.seed, extra, ctx.threads)
    else:
        if len(generators) != 1:
            raise ConfigError("augmentation needs exactly one --models generator")
        target = args.target if args.target is not None else max(train.class_counts().values())
        before, after = augmentation_experiment(train, test, next(iter(generators.values())), target, val,
                                                cfg, ctx.seed, extra)
        results = {"before": before, "after": after}
    written = save_experiment_reports(results, args.out)
    log("cli", f"Wrote {len(written)} report files next to {args.out}")
    log("cli", f"{args.kind} experiment: " + ", ".join(f"{k}={v['test'].macro_mean:.2f}%" for k, v in results.items()))
    return 0


def cmd_export_embeddings(args, ctx: RunContext) -> int:
    manager = ModelManager(ctx.profile)
    kind, model = manager.load(args.model)
    corpus = _align_vocab(load_corpus_csv(args.corpus), model.vocab)
    names = [corpus.vocab[i] for i in corpus.labels]
    if kind == "vae":
        mu = embed_vae(model, corpus)
        frame = pd.DataFrame(mu, columns=[f"z_{j}" for j in range(mu.shape[1])])
        frame.insert(0, "label", names)
    elif kind in ("gan", "diffusion"):
        generate = manager.generator_for(kind, model, ctx.threads)
        blocks = [corpus]
        for name, count in corpus.class_counts().items():
            if count:
                blocks.append(generated_corpus(generate(name, count, ctx.seed), name, model.vocab))
        stacked = merge_corpora(*blocks)
        frame = pd.DataFrame(stacked.spectra, columns=bin_columns(stacked.dim))
        frame.insert(0, "label", [stacked.vocab[i] for i in stacked.labels])
        frame.insert(0, "source", ["real"] * corpus.n + ["generated"] * (stacked.n - corpus.n))
    else:
        raise ConfigError(f"cannot export embeddings from a {kind} model")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out, index=False, float_format="%.9g")
    log("cli", f"Exported {len(frame)} rows → {args.out}")
    return 0


# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cli.py", description="MALDI-TOF spectra generation toolkit")
    parser.add_argument("--seed", type=int, default=None, help="run seed (default: profile, 17)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads, 0 = one per CPU")
    parser.add_argument("--profile", default=None, help="profiles.yaml override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="raw '<label>__<id>.txt' files → corpus CSV")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("toy-corpus", help="synthetic peak-template corpus")
    p.add_argument("--spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_toy_corpus)

    p = sub.add_parser("train", help="train a generative model or classifier")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample spectra of one class from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("metrics", help="PIKE-all / MMD² / CD / ND report")
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("experiment", help="synthetic substitution or minority augmentation")
    p.add_argument("--kind", required=True, choices=["substitution", "augmentation"])
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--ood")
    p.add_argument("--models", nargs="*")
    p.add_argument("--target", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export-embeddings", help="VAE latent means or real+generated matrices")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        profile = RunProfile(args.profile)
        run = build(RunConfig, {"seed": profile.seed, "threads": profile.threads},
                    {"seed": args.seed, "threads": args.threads, "config": getattr(args, "config", None),
                     "out": args.out})
        ctx = RunContext(seed=run.seed, threads=run.threads, profile=profile)
        log("cli", f"{args.command} ({ctx!r})")
        return args.func(args, ctx)
    except MaldiGenError as e:
        warn("cli", f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        warn("cli", f"Invalid data: {e}")
        return InvalidInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
