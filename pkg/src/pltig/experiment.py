"""Experiment plumbing shared by the command-line front-end.

An experiment file is a JSON document naming a corpus, how to split it,
and a roster of models.  Relative paths inside it are resolved against the
file's own directory so experiment directories can be moved around.

Work is organized in (model, split) units.  Each unit trains one model on
one split and writes a model file plus a JSONL training log; evaluation
reads those files back, so a campaign can be resumed or re-scored without
retraining.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .baselines.ngram import (MODEL_FORMAT as NGRAM_FORMAT, ngram_from_dict, ngram_param_count,
                              ngram_train, right_branching_brackets, save_ngram)
from .baselines.pcfg import (MODEL_FORMAT as PCFG_FORMAT, PcfgModel, pcfg_build, pcfg_from_dict,
                             pcfg_log2_probs, pcfg_param_count, pcfg_viterbi)
from .chart import corpus_log2_probs
from .corpus import (Sentence, SplitSpec, Vocabulary, load_corpus, read_manifest, split_indices,
                     write_manifest)
from .errors import ConfigError, NoParseError, VocabularyError
from .evaluation import EvalReport, SignificanceTable, cross_entropy_from_scores, crossing_brackets
from .grammar import MODEL_FORMAT as PLTIG_FORMAT, TemplateConfig, build_template, init_params, model_from_dict
from .grammar import param_count as pltig_param_count
from .training import PltigModel, TrainConfig, run_em
from .viterbi import ViterbiChart, extract_brackets

logger = logging.getLogger(__name__)

KINDS = ("pltig", "pcfg", "ngram")
METRICS = ("cross_entropy", "crossing_brackets")
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"seed", "jobs", "checkpoint_dir", "log_path"}


def manifest_name(seed: int) -> str:
    return f"split-{seed}.txt"


# -- experiment files ------------------------------------------------------


@dataclass
class ModelEntry:
    id: str
    kind: str
    template: str | None = None
    nonterminals: int | None = None
    order: int | None = None
    smoothing: str | None = None  # pltig/pcfg: "none"; ngram: "deleted-interpolation"
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"model {self.id!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if not self.id or "/" in self.id:
            raise ConfigError(f"bad model id {self.id!r}")
        if self.kind == "pltig":
            TemplateConfig.parse(self.template or "")
        elif self.kind == "pcfg":
            if not isinstance(self.nonterminals, int) or self.nonterminals < 1:
                raise ConfigError(f"model {self.id!r}: pcfg needs a positive 'nonterminals'")
        elif self.order not in (2, 3):
            raise ConfigError(f"model {self.id!r}: ngram order must be 2 or 3")
        unknown = set(self.training) - _TRAIN_FIELDS
        if unknown:
            raise ConfigError(f"model {self.id!r}: unknown training option(s) {sorted(unknown)}")
        self.train_config()  # validates values

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelEntry":
        allowed = {f.name for f in fields(cls)}
        extra = set(doc) - allowed
        if extra:
            raise ConfigError(f"unknown model field(s) {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad model entry {doc!r}: {exc}") from None

    def train_config(self, **overrides) -> TrainConfig:
        opts = dict(self.training)
        if self.kind == "pltig" and self.smoothing is not None:
            opts.setdefault("smoothing", self.smoothing)
        opts.update(overrides)
        try:
            return TrainConfig(**opts)
        except TypeError as exc:
            raise ConfigError(f"model {self.id!r}: {exc}") from None


@dataclass
class ExperimentSpec:
    corpus: Path
    corpus_format: str = "bracketed-sexp"
    split: SplitSpec = field(default_factory=SplitSpec)
    split_count: int = 1
    manifests: list[Path] = field(default_factory=list)
    models: list[ModelEntry] = field(default_factory=list)
    metrics: tuple[str, ...] = METRICS
    crossing_level: str = "bracket"
    timing: bool = False
    output_dir: Path = Path("out")

    def __post_init__(self):
        if not self.models:
            raise ConfigError("experiment has an empty model roster")
        ids = [m.id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ConfigError("model ids must be unique")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ConfigError(f"unknown metric(s) {sorted(bad)}")
        if self.crossing_level not in ("bracket", "sentence"):
            raise ConfigError(f"crossing_level must be 'bracket' or 'sentence', got {self.crossing_level!r}")
        if self.split_count < 1:
            raise ConfigError("split count must be at least 1")

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "ExperimentSpec":
        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        try:
            corpus = doc["corpus"]
            split = dict(doc.get("split", {}))
            spec = SplitSpec(
                train_fraction=split.pop("train", 0.8),
                heldout_fraction=split.pop("heldout", 0.1),
                test_fraction=split.pop("test", 0.1),
                seed=split.pop("seed", 0),
                max_length=split.pop("max_length", None),
            )
            count = split.pop("count", 1)
            manifests = [resolve(m) for m in split.pop("manifests", [])]
            if split:
                raise ConfigError(f"unknown split option(s) {sorted(split)}")
            return cls(
                corpus=resolve(corpus["path"]),
                corpus_format=corpus.get("format", "bracketed-sexp"),
                split=spec,
                split_count=count,
                manifests=manifests,
                models=[ModelEntry.from_dict(m) for m in doc.get("models", [])],
                metrics=tuple(doc.get("metrics", METRICS)),
                crossing_level=doc.get("crossing_level", "bracket"),
                timing=bool(doc.get("timing", False)),
                output_dir=resolve(doc.get("output_dir", "out")),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed experiment file: missing or bad field {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"experiment file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, path.parent)

    def model(self, model_id: str) -> ModelEntry:
        for m in self.models:
            if m.id == model_id:
                return m
        raise ConfigError(f"no model {model_id!r} in experiment (have {[m.id for m in self.models]})")

    def split_seeds(self) -> list[int]:
        return [self.split.seed + i for i in range(self.split_count)]


# -- splitting -------------------------------------------------------------


def write_splits(corpus: Sequence[Sentence], spec: SplitSpec, count: int, out_dir) -> list[Path]:
    """Write ``count`` manifests for seeds ``spec.seed .. spec.seed+count-1``."""
    if count < 1:
        raise ConfigError("number of splits must be at least 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for seed in range(spec.seed, spec.seed + count):
        s = SplitSpec(spec.train_fraction, spec.heldout_fraction, spec.test_fraction, seed, spec.max_length)
        path = out_dir / manifest_name(seed)
        write_manifest(path, split_indices(corpus, s), s)
        paths.append(path)
    return paths


def take(corpus: Sequence[Sentence], indices: Sequence[int]) -> list[Sentence]:
    try:
        return [corpus[i] for i in indices]
    except IndexError:
        raise ConfigError(f"manifest index out of range for a corpus of {len(corpus)} sentences") from None


# -- loaded models ---------------------------------------------------------


@dataclass
class LoadedModel:
    """A trained model of any kind behind one scoring/parsing interface."""

    kind: str
    vocab: Vocabulary
    payload: object
    metadata: dict = field(default_factory=dict)

    @property
    def param_count(self) -> int:
        if self.kind == "pltig":
            return pltig_param_count(self.payload[0])
        if self.kind == "pcfg":
            return pcfg_param_count(self.payload.M, self.payload.V)
        return ngram_param_count(len(self.vocab), self.payload.order)

    def log2_probs(self, sentences: Sequence[Sentence]):
        if self.kind == "pltig":
            return corpus_log2_probs(*self.payload, sentences)
        if self.kind == "pcfg":
            return pcfg_log2_probs(self.payload, sentences)
        return self.payload.log2_probs(sentences)

    def parse(self, sentence: Sentence) -> tuple[set, float]:
        """Best bracketing (spans of width ``2..T-1``) and its log2 score.

        N-gram models have no structure; they return right-branching
        brackets with the sentence's own log2 probability.
        """
        if self.kind == "pltig":
            chart = ViterbiChart(*self.payload, sentence)
            deriv = chart.derivation()
            return extract_brackets(self.payload[0], deriv, sentence), deriv.score
        if self.kind == "pcfg":
            return pcfg_viterbi(self.payload, sentence)
        score = self.payload.log2_prob(sentence)
        if not math.isfinite(score):
            raise NoParseError("zero probability under the n-gram model")
        return right_branching_brackets(self.vocab.decode(sentence.tokens)), score


def model_from_document(doc: dict) -> LoadedModel:
    fmt = doc.get("format") if isinstance(doc, dict) else None
    meta = doc.get("metadata", {}) if isinstance(doc, dict) else {}
    if fmt == PLTIG_FORMAT:
        grammar, params = model_from_dict(doc)
        return LoadedModel("pltig", grammar.vocab, (grammar, params), meta)
    if fmt == PCFG_FORMAT:
        g = pcfg_from_dict(doc)
        return LoadedModel("pcfg", g.vocab, g, meta)
    if fmt == NGRAM_FORMAT:
        m = ngram_from_dict(doc)
        return LoadedModel("ngram", m.vocab, m, meta)
    raise ConfigError(f"unrecognized model format {fmt!r}")


def load_any_model(path) -> LoadedModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a JSON model file ({exc})") from None
    return model_from_document(doc)


def recode(sentences: Sequence[Sentence], source: Vocabulary, target: Vocabulary) -> list[Sentence]:
    """Re-index sentences from ``source`` symbols to ``target`` symbols.

    Raises :class:`VocabularyError` naming every symbol the target lacks.
    """
    if source == target:
        return list(sentences)
    used = {tok for s in sentences for tok in s.tokens}
    missing = [source.symbols[i] for i in sorted(used) if source.symbols[i] not in target]
    if missing:
        raise VocabularyError(missing)
    table = {i: target.index(source.symbols[i]) for i in used}
    return [Sentence(tuple(table[t] for t in s.tokens), s.gold_brackets) for s in sentences]


# -- training units --------------------------------------------------------


@dataclass
class Unit:
    """One (model, split) job.  Everything a worker process needs, by value."""

    entry: ModelEntry
    corpus: Path
    corpus_format: str
    manifest: Path
    seed: int
    out_dir: Path
    jobs: int = 1
    checkpoints: bool = False
    overrides: dict = field(default_factory=dict)

    @property
    def stem(self) -> str:
        return f"{self.entry.id}.{self.manifest.stem}"

    @property
    def model_path(self) -> Path:
        return self.out_dir / f"{self.stem}.model.json"

    @property
    def log_path(self) -> Path:
        return self.out_dir / f"{self.stem}.log.jsonl"


def train_unit(unit: Unit) -> Path:
    """Train one model on one split and write the model file and its log."""
    vocab, corpus = load_corpus(unit.corpus, unit.corpus_format)
    train_idx, held_idx, _ = read_manifest(unit.manifest)
    train, heldout = take(corpus, train_idx), take(corpus, held_idx)
    entry = unit.entry
    unit.out_dir.mkdir(parents=True, exist_ok=True)
    # the manifest is recorded relative to the model file so the pair can move together
    manifest = os.path.relpath(unit.manifest, unit.out_dir)
    meta = {"model_id": entry.id, "kind": entry.kind, "manifest": manifest, "seed": unit.seed}
    t0 = time.perf_counter()
    if entry.kind == "ngram":
        model = ngram_train(train, vocab, entry.order, heldout, entry.smoothing or "deleted-interpolation")
        unit.log_path.write_text("", encoding="utf-8")
        meta["param_count"] = ngram_param_count(len(vocab), entry.order)
        meta["seconds"] = time.perf_counter() - t0
        save_ngram(unit.model_path, model, meta)
        return unit.model_path

    config = entry.train_config(seed=unit.seed, jobs=unit.jobs, log_path=str(unit.log_path),
                                checkpoint_dir=str(unit.out_dir / "checkpoints" / unit.stem)
                                if unit.checkpoints else None,
                                **unit.overrides)
    if entry.kind == "pltig":
        grammar = build_template(vocab, TemplateConfig.parse(entry.template))
        adapter, init = PltigModel(grammar), init_params(grammar, unit.seed)
        meta["param_count"] = pltig_param_count(grammar)
    else:
        adapter, init = PcfgModel(), pcfg_build(vocab, entry.nonterminals, unit.seed)
        meta["param_count"] = pcfg_param_count(entry.nonterminals, len(vocab))
    params, trace = run_em(adapter, init, train, heldout, config)
    meta.update(iterations=trace.iterations, best_iteration=trace.best_iteration, stop_reason=trace.stop_reason)
    meta["seconds"] = time.perf_counter() - t0
    adapter.save(params, unit.model_path, meta)
    logger.info("%s: %d iterations, %s", unit.stem, trace.iterations, trace.stop_reason)
    return unit.model_path


# -- evaluation ------------------------------------------------------------


def evaluate_model(model: LoadedModel, test: Sequence[Sentence], vocab: Vocabulary, model_id: str,
                   split: str | None = None, level: str = "bracket", timing: bool = False,
                   metrics: Sequence[str] = METRICS) -> EvalReport:
    """Score one model on one test set.

    ``test`` is encoded over ``vocab`` (the corpus vocabulary); it is
    re-indexed into the model's vocabulary first.
    """
    sents = recode(test, vocab, model.vocab)
    ce = cross_entropy_from_scores(model.log2_probs(sents), [len(s) for s in sents])
    rate = float("nan")
    if "crossing_brackets" in metrics:
        cands = []
        for s in sents:
            try:
                cands.append(model.parse(s.without_brackets())[0])
            except NoParseError:
                cands.append(set())
        rate = crossing_brackets(cands, [s.gold_brackets for s in sents], [len(s) for s in sents], level)
    meta = model.metadata
    return EvalReport(
        model_id=model_id,
        cross_entropy=ce.bits_per_word if "cross_entropy" in metrics else float("nan"),
        crossing_bracket_rate=rate,
        scored=ce.scored,
        skipped=ce.skipped,
        param_count=model.param_count,
        iterations=meta.get("iterations"),
        seconds=meta.get("seconds") if timing else None,
        split=split,
    )


def significance_tables(reports: Sequence[EvalReport], metrics: Sequence[str] = METRICS,
                        alpha: float = 0.05) -> list[SignificanceTable]:
    """Paired t-tests across splits; empty unless every model covers the same two or more splits."""
    by_model: dict[str, dict[str, EvalReport]] = {}
    for r in reports:
        by_model.setdefault(r.model_id, {})[r.split] = r
    splits = [set(v) for v in by_model.values()]
    if len(by_model) < 2 or any(s != splits[0] for s in splits) or len(splits[0]) < 2:
        return []
    order = sorted(splits[0], key=str)
    tables = []
    for metric in metrics:
        key = "cross_entropy" if metric == "cross_entropy" else "crossing_bracket_rate"
        scores = {m: [getattr(rs[s], key) for s in order] for m, rs in by_model.items()}
        if any(math.isnan(x) for xs in scores.values() for x in xs):
            continue
        tables.append(SignificanceTable.build(scores, metric, alpha))
    return tables


def run_units(units: Sequence[Unit], jobs: int = 1) -> list[Path]:
    """Train every unit, ``jobs`` at a time; results come back in input order."""
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(train_unit, units))
    return [train_unit(u) for u in units]
