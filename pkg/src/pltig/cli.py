"""Command-line front-end: ``pltig {split,train,parse,eval,campaign}``.

Exit status is 0 on success, 1 when a run fails (including any NOPARSE
line from ``parse``) and 2 for usage, configuration or input-format
problems.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .corpus import FORMATS, Sentence, SplitSpec, format_bracketed, load_corpus, read_manifest
from .errors import (ConfigError, CorpusFormatError, NoParseError, PltigError, UsageError,
                     VocabularyError)
from .evaluation import render_report, report_json
from .experiment import (ExperimentSpec, ModelEntry, Unit, evaluate_model, load_any_model, manifest_name,
                         run_units, significance_tables, take, write_splits)

logger = logging.getLogger("pltig")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


# -- helpers ---------------------------------------------------------------


def _experiment(args) -> ExperimentSpec | None:
    return ExperimentSpec.load(args.config) if args.config else None


def _out_dir(args, exp: ExperimentSpec | None) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    return exp.output_dir if exp else Path(".")


def _corpus_source(args, exp):
    path = args.corpus or (exp.corpus if exp else None)
    if path is None:
        raise UsageError("no corpus given (use --corpus or --config)")
    fmt = args.format or (exp.corpus_format if exp else "bracketed-sexp")
    return Path(path), fmt


def _load(path: Path, fmt: str):
    if not path.exists():
        raise FileNotFoundError(f"corpus {path} not found")
    return load_corpus(path, fmt)


def _split_spec(args, exp) -> SplitSpec:
    base = exp.split if exp else SplitSpec()
    changes = {}
    for name in ("train", "heldout", "test"):
        value = getattr(args, name, None)
        if value is not None:
            changes[f"{name}_fraction"] = value
    if getattr(args, "max_length", None) is not None:
        changes["max_length"] = args.max_length
    if args.seed is not None:
        changes["seed"] = args.seed
    return replace(base, **changes) if changes else base


def _write_outputs(out_dir: Path, reports, tables, title: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    text = render_report(reports, title)
    for table in tables:
        text += "\n" + table.render()
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    (out_dir / "report.json").write_text(report_json(reports, tables), encoding="utf-8")
    sys.stdout.write(text)


# -- subcommands -----------------------------------------------------------


def cmd_split(args) -> int:
    exp = _experiment(args)
    vocab, corpus = _load(*_corpus_source(args, exp))
    count = args.count if args.count is not None else (exp.split_count if exp else 1)
    if count < 1:
        raise UsageError("--count must be at least 1")
    paths = write_splits(corpus, _split_spec(args, exp), count, _out_dir(args, exp))
    for p in paths:
        print(p)
    return EXIT_OK


def _entry_from_flags(args) -> ModelEntry:
    if not args.kind:
        raise UsageError("train needs --kind (or --config with --model)")
    training = {}
    for flag, key in (("max_iterations", "max_iterations"), ("min_gain", "min_entropy_gain")):
        if getattr(args, flag) is not None:
            training[key] = getattr(args, flag)
    if args.constraints:
        training["constraints"] = True
    if args.no_early_stop:
        training["early_stopping"] = False
    name = args.name or {"pltig": args.template, "pcfg": f"pcfg{args.nonterminals}",
                         "ngram": f"ngram{args.order}"}[args.kind]
    return ModelEntry(id=str(name), kind=args.kind, template=args.template, nonterminals=args.nonterminals,
                      order=args.order, smoothing=args.smoothing, training=training)


def cmd_train(args) -> int:
    exp = _experiment(args)
    path, fmt = _corpus_source(args, exp)
    if not path.exists():
        raise FileNotFoundError(f"corpus {path} not found")
    if exp and args.model:
        entry = exp.model(args.model)
    else:
        entry = _entry_from_flags(args)
    out_dir = _out_dir(args, exp)
    seed = args.seed if args.seed is not None else (exp.split.seed if exp else 0)
    manifest = Path(args.manifest) if args.manifest else out_dir / manifest_name(seed)
    if not manifest.exists():
        raise FileNotFoundError(f"split manifest {manifest} not found (run 'pltig split' first)")
    overrides = {"max_iterations": args.max_iterations} if args.max_iterations is not None else {}
    unit = Unit(entry, path, fmt, manifest, seed, out_dir, args.jobs, args.checkpoints, overrides)
    print(run_units([unit])[0])
    return EXIT_OK


def cmd_parse(args) -> int:
    model = load_any_model(args.model)
    src = open(args.input, encoding="utf-8") if args.input != "-" else sys.stdin
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    failures = 0
    try:
        for lineno, line in enumerate(src, 1):
            tags = line.split()
            if not tags:
                out.write("NOPARSE empty line\n")
                failures += 1
                continue
            unknown = sorted({t for t in tags if t not in model.vocab})
            if unknown:
                out.write(f"NOPARSE unknown tag(s): {' '.join(unknown)}\n")
                failures += 1
                continue
            sentence = Sentence(model.vocab.encode(tags))
            try:
                brackets, score = model.parse(sentence)
            except NoParseError as exc:
                out.write(f"NOPARSE {exc}\n")
                failures += 1
                continue
            tree = format_bracketed(tags, set(brackets) | {(0, len(tags))})
            out.write(f"{tree}\t{score:.6f}\n")
    finally:
        if src is not sys.stdin:
            src.close()
        if out is not sys.stdout:
            out.close()
    if failures:
        logger.error("%d line(s) could not be parsed", failures)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_eval(args) -> int:
    exp = _experiment(args)
    vocab, corpus = _load(*_corpus_source(args, exp))
    level = args.crossing_level or (exp.crossing_level if exp else "bracket")
    timing = args.timing or (exp.timing if exp else False)
    if not args.models:
        raise UsageError("eval needs at least one model file")
    reports = []
    seen: dict[tuple, int] = {}
    for path in args.models:
        model = load_any_model(path)
        model_id = model.metadata.get("model_id", Path(path).name.split(".")[0])
        if args.manifest:
            manifest = Path(args.manifest)
        elif "manifest" in model.metadata:
            manifest = Path(path).parent / model.metadata["manifest"]
        else:
            manifest = None
        if manifest is None:
            test, split = corpus, "all"
        else:
            test, split = take(corpus, read_manifest(manifest)[2]), manifest.stem
        seen[(model_id, split)] = seen.get((model_id, split), 0) + 1
        if seen[(model_id, split)] > 1:
            model_id = f"{model_id}#{seen[(model_id, split)]}"
        reports.append(evaluate_model(model, test, vocab, model_id, split, level, timing))
    tables = significance_tables(reports)
    _write_outputs(_out_dir(args, exp), reports, tables, "evaluation")
    return EXIT_OK


def cmd_campaign(args) -> int:
    exp = _experiment(args)
    if exp is None:
        raise UsageError("campaign needs --config")
    out_dir = _out_dir(args, exp)
    vocab, corpus = _load(exp.corpus, exp.corpus_format)
    if exp.manifests:
        manifests = exp.manifests
    else:
        spec = _split_spec(args, exp)
        manifests = write_splits(corpus, spec, exp.split_count, out_dir / "splits")
    base = exp.split.seed if args.seed is None else args.seed
    seeds = [base + i for i in range(len(manifests))]
    # parallelism goes to the (model, split) units; each unit trains serially
    units = [Unit(entry, exp.corpus, exp.corpus_format, m, seed, out_dir / "models")
             for m, seed in zip(manifests, seeds) for entry in exp.models]
    paths = run_units(units, args.jobs)
    reports = []
    for unit, path in zip(units, paths):
        model = load_any_model(path)
        test = take(corpus, read_manifest(unit.manifest)[2])
        reports.append(evaluate_model(model, test, vocab, unit.entry.id, unit.manifest.stem,
                                      exp.crossing_level, exp.timing, exp.metrics))
    tables = significance_tables(reports, exp.metrics)
    _write_outputs(out_dir, reports, tables, f"campaign over {len(manifests)} split(s)")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="base random seed")
    parser.add_argument("--config", default=default, help="experiment file (JSON)")
    parser.add_argument("--out-dir", dest="out_dir", default=default, help="output directory")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes")
    parser.add_argument("--log-level", dest="log_level", default=argparse.SUPPRESS if suppress else "WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _corpus_flags(p):
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--format", choices=FORMATS, help="corpus format (default bracketed-sexp)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pltig", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write train/held-out/test manifests")
    _global_flags(p, suppress=True)
    _corpus_flags(p)
    p.add_argument("--count", type=int, help="number of splits (seeds seed..seed+count-1)")
    p.add_argument("--train", type=float)
    p.add_argument("--heldout", type=float)
    p.add_argument("--test", type=float)
    p.add_argument("--max-length", dest="max_length", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one model on one split")
    _global_flags(p, suppress=True)
    _corpus_flags(p)
    p.add_argument("--manifest", help="split manifest (default OUT_DIR/split-SEED.txt)")
    p.add_argument("--model", help="model id from the experiment file")
    p.add_argument("--kind", choices=["pltig", "pcfg", "ngram"])
    p.add_argument("--template", help="pltig template, e.g. L2R1 or bigram")
    p.add_argument("--nonterminals", type=int, help="pcfg nonterminal count")
    p.add_argument("--order", type=int, help="n-gram order (2 or 3)")
    p.add_argument("--name", help="model id used in file names and reports")
    p.add_argument("--smoothing", choices=["none", "deleted-interpolation"])
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--min-gain", dest="min_gain", type=float, help="stop when held-out gain drops below this")
    p.add_argument("--no-early-stop", dest="no_early_stop", action="store_true")
    p.add_argument("--constraints", action="store_true", help="train under the corpus gold brackets")
    p.add_argument("--checkpoints", action="store_true", help="save parameters after every iteration")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="Viterbi-parse flat tag lines")
    _global_flags(p, suppress=True)
    p.add_argument("model", help="model file")
    p.add_argument("input", help="flat-tags file, or - for stdin")
    p.add_argument("-o", "--output", help="output file (default stdout)")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="score model files on test data")
    _global_flags(p, suppress=True)
    _corpus_flags(p)
    p.add_argument("models", nargs="*", help="model files")
    p.add_argument("--manifest", help="use this split's test partition for every model")
    p.add_argument("--crossing-level", dest="crossing_level", choices=["bracket", "sentence"])
    p.add_argument("--timing", action="store_true", help="include wall-clock training time in reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("campaign", help="split, train and evaluate a whole experiment")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_campaign)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CorpusFormatError, VocabularyError, FileNotFoundError) as exc:
        print(f"pltig: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PltigError as exc:
        print(f"pltig: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
