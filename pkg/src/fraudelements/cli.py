"""Command-line interface wiring all modules into reproducible pipelines.

Every subcommand runs with seeded randomness (``--seed`` defaults to 0, never
wall clock) and writes a run manifest beside its primary output so any result
can be reproduced from the recorded configuration.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from . import analytics, annotation, model as mdl, synthgen, training
from .corpus import (
    Clause,
    Corpus,
    LABELS,
    Paragraph,
    read_corpus,
    segment_paragraph,
    split_corpus,
    tokenize_corpus,
    write_corpus,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    parser = _Parser(prog="fraudelements",
                     description="Clause-level fraud element identification")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("segment", help="split raw paragraphs into a corpus")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", dest="out", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--config", dest="config")
    p.add_argument("--n", dest="n", type=int, required=True)
    p.add_argument("--seed", dest="seed", type=int)
    p.add_argument("--out", dest="out", required=True)

    p = sub.add_parser("analyze", help="corpus statistics report")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", dest="out", required=True)
    p.add_argument("--kappa", action="store_true",
                   help="include the inter-annotator agreement report")

    p = sub.add_parser("adjudicate", help="resolve annotator labels to gold")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", dest="out", required=True)
    p.add_argument("--report", dest="report",
                   help="also write a kappa report to this path")

    p = sub.add_parser("train", help="two-phase training on a labeled corpus")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--config", dest="config")
    p.add_argument("--out", dest="out", required=True)
    p.add_argument("--seed", dest="seed", type=int)
    p.add_argument("--variant", choices=mdl.VARIANTS, default="full")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled corpus")
    p.add_argument("--model", dest="model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", dest="out", required=True)

    p = sub.add_parser("predict", help="per-clause label probabilities")
    p.add_argument("--model", dest="model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", dest="out", required=True)
    p.add_argument("--stage", choices=("first", "refined"), default="refined")

    p = sub.add_parser("ablate", help="train and compare all model variants")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--config", dest="config")
    p.add_argument("--out", dest="out", required=True)
    p.add_argument("--seed", dest="seed", type=int)
    return parser


def _write_json(path, obj) -> None:
    Path(path).write_text(
        json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def _write_manifest(out: str, command: str, config: dict, seed: int | None,
                    inputs: dict, outputs: dict, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": __version__,
        "duration_seconds": time.time() - started,
    }
    _write_json(f"{out}.manifest.json", manifest)


def _json_base(path: str) -> str:
    p = Path(path)
    return str(p.with_suffix("")) if p.suffix == ".json" else str(p)


def _load_configs(path: str | None) -> tuple[dict, dict]:
    """Read a {"model": ..., "train": ...} config file; both parts optional."""
    if path is None:
        return {}, {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data.get("model", {}), data.get("train", {})


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_segment(args) -> None:
    started = time.time()
    lines = Path(args.inp).read_text(encoding="utf-8").splitlines()
    paragraphs = []
    for raw in lines:
        pieces = segment_paragraph(raw)
        if not pieces:
            continue
        pid = f"p{len(paragraphs):06d}"
        paragraphs.append(Paragraph(
            pid, tuple(Clause(text=t) for t in pieces)))
    corpus = Corpus(tuple(paragraphs))
    write_corpus(corpus, args.out)
    print(f"segmented {len(lines)} lines into {len(paragraphs)} paragraphs "
          f"({corpus.n_clauses()} clauses)")
    _write_manifest(args.out, "segment", {}, None,
                    {"in": args.inp}, {"corpus": args.out}, started)


def _cmd_generate(args) -> None:
    started = time.time()
    if args.config:
        config = synthgen.load_config(args.config)
    else:
        config = synthgen.default_config()
    seed = args.seed if args.seed is not None else config.seed
    rng = np.random.default_rng(seed)
    corpus = synthgen.generate_corpus(config, args.n, rng)
    write_corpus(corpus, args.out)
    print(f"generated {len(corpus.paragraphs)} paragraphs "
          f"({corpus.n_clauses()} clauses)")
    _write_manifest(args.out, "generate", synthgen.config_to_dict(config),
                    seed, {"config": args.config}, {"corpus": args.out},
                    started)


def _cmd_analyze(args) -> None:
    started = time.time()
    corpus = read_corpus(args.inp)
    kappa = annotation.pairwise_kappa_report(corpus) if args.kappa else None
    report = analytics.build_report(corpus, kappa)
    _write_json(args.out, report)
    base = _json_base(args.out)
    stats = analytics.categorical_stats(corpus)
    tables = {
        f"{base}.categories.tsv": analytics.categories_table(stats),
        f"{base}.stages.tsv": analytics.stages_table(
            analytics.positional_distribution(corpus)),
        f"{base}.transitions_original.tsv": analytics.transition_table(
            analytics.ordinal_relation(corpus, balanced=False)),
        f"{base}.transitions_balanced.tsv": analytics.transition_table(
            analytics.ordinal_relation(corpus, balanced=True)),
    }
    for path, text in tables.items():
        Path(path).write_text(text, encoding="utf-8")
    print(f"analyzed {len(corpus.paragraphs)} paragraphs -> {args.out}")
    _write_manifest(args.out, "analyze", {"kappa": args.kappa}, None,
                    {"in": args.inp},
                    {"report": args.out, "tables": sorted(tables)}, started)


def _cmd_adjudicate(args) -> None:
    started = time.time()
    corpus = read_corpus(args.inp)
    adjudicated, counts = annotation.adjudicate_corpus(corpus)
    write_corpus(adjudicated, args.out)
    outputs = {"corpus": args.out}
    if args.report:
        _write_json(args.report, annotation.pairwise_kappa_report(corpus))
        outputs["kappa_report"] = args.report
    print(f"adjudicated: {counts['agreed']} agreed, "
          f"{counts['resolved']} resolved, {counts['discarded']} discarded")
    _write_manifest(args.out, "adjudicate", {}, None,
                    {"in": args.inp}, outputs, started)


def _train_one(train_config, model_config, variant, train_split, valid_split):
    vconfig = training.variant_model_config(model_config, variant)
    if variant == "baseline":
        return training.train_clause_baseline(
            train_config, vconfig, train_split, valid_split)
    return training.train_full(
        train_config, vconfig, train_split, valid_split)


def _cmd_train(args) -> None:
    started = time.time()
    model_part, train_part = _load_configs(args.config)
    corpus = read_corpus(args.inp)
    if args.seed is not None:
        train_part = {**train_part, "seed": args.seed}
    train_config = training.TrainConfig.from_dict(train_part)
    train_split, valid_split, _ = split_corpus(corpus, seed=train_config.seed)
    vocab_probe = training.build_vocabulary(
        c.text for p in train_split.paragraphs for c in p.clauses)
    model_config = mdl.ModelConfig(
        **{"vocab_size": len(vocab_probe), **model_part})
    result = _train_one(train_config, model_config, args.variant,
                        train_split, valid_split)
    mdl.save_checkpoint(args.out, result.params, result.vocabulary,
                        variant=args.variant)
    log_path = f"{args.out}.log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for record in result.log:
            fh.write(json.dumps(record) + "\n")
    vocab_path = f"{args.out}.vocab.txt"
    result.vocabulary.save(vocab_path)
    print(f"trained variant {args.variant}; best epoch {result.best_epoch}")
    _write_manifest(
        args.out, "train",
        {"model": model_config.to_dict(), "train": train_config.to_dict(),
         "variant": args.variant},
        train_config.seed, {"in": args.inp, "config": args.config},
        {"checkpoint": args.out, "log": log_path, "vocabulary": vocab_path},
        started)


def _cmd_eval(args) -> None:
    started = time.time()
    params, vocab, variant = mdl.load_checkpoint(args.model)
    if vocab is None:
        raise ValueError(f"{args.model}: checkpoint carries no vocabulary")
    corpus = tokenize_corpus(read_corpus(args.inp), vocab)
    report = training.evaluate(params, corpus,
                               use_head=(variant == "baseline"))
    _write_json(args.out, report.to_dict())
    print(f"accuracy {report.accuracy:.4f}, macro-F1 {report.f1:.4f} "
          f"on {report.n_clauses} clauses")
    _write_manifest(args.out, "eval",
                    {"model_config": params.config.to_dict(),
                     "variant": variant},
                    None, {"model": args.model, "in": args.inp},
                    {"report": args.out}, started)


def _cmd_predict(args) -> None:
    started = time.time()
    params, vocab, variant = mdl.load_checkpoint(args.model)
    if vocab is None:
        raise ValueError(f"{args.model}: checkpoint carries no vocabulary")
    corpus = tokenize_corpus(read_corpus(args.inp), vocab)
    n_records = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for p in corpus.paragraphs:
            if variant == "baseline":
                probs = mdl.head_probabilities(params, p)
            else:
                trace = mdl.forward(params, p)
                probs = (trace.first_probs if args.stage == "first"
                         else trace.output_probs)
            for i in range(len(p.clauses)):
                record = {
                    "paragraph_id": p.id,
                    "clause_index": i,
                    "label": LABELS[int(np.argmax(probs[i]))].name,
                    "probs": [float(x) for x in probs[i]],
                }
                fh.write(json.dumps(record) + "\n")
                n_records += 1
    print(f"wrote {n_records} predictions")
    _write_manifest(args.out, "predict",
                    {"stage": args.stage, "variant": variant}, None,
                    {"model": args.model, "in": args.inp},
                    {"predictions": args.out}, started)


def _cmd_ablate(args) -> None:
    started = time.time()
    model_part, train_part = _load_configs(args.config)
    corpus = read_corpus(args.inp)
    if args.seed is not None:
        train_part = {**train_part, "seed": args.seed}
    train_config = training.TrainConfig.from_dict(train_part)
    train_split, valid_split, test_split = split_corpus(
        corpus, seed=train_config.seed)
    vocab_probe = training.build_vocabulary(
        c.text for p in train_split.paragraphs for c in p.clauses)
    model_config = mdl.ModelConfig(
        **{"vocab_size": len(vocab_probe), **model_part})
    rows = training.run_ablation_suite(
        train_config, model_config, train_split, valid_split, test_split)
    Path(args.out).write_text(training.ablation_table(rows), encoding="utf-8")
    for row in rows:
        print(f"{row['variant']}: accuracy {100 * row['accuracy']:.2f}%, "
              f"macro-F1 {100 * row['f1']:.2f}%")
    _write_manifest(
        args.out, "ablate",
        {"model": model_config.to_dict(), "train": train_config.to_dict()},
        train_config.seed, {"in": args.inp, "config": args.config},
        {"table": args.out}, started)


_COMMANDS = {
    "segment": _cmd_segment,
    "generate": _cmd_generate,
    "analyze": _cmd_analyze,
    "adjudicate": _cmd_adjudicate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        _COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"fraudelements {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
