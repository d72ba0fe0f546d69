"""Inside-outside EM for PLTIGs, with a model-agnostic driver.

The driver :func:`run_em` only needs an adapter exposing ``e_step``,
``m_step``, ``log2_probs``, ``smooth`` and ``save``; the PLTIG adapter
lives here and the PCFG baseline supplies its own.

Training itself is unsmoothed so the likelihood can only go up.  When
deleted interpolation is switched on, a smoothed copy of each iterate is
what gets scored on held-out data and what is finally returned.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chart import batches, inside_batch, outside_batch, tables, corpus_log2_probs, _check_tokens
from .corpus import Sentence
from .errors import ConfigError, EvaluationError, TrainingError
from .evaluation import cross_entropy_from_scores
from .grammar import Grammar, ParamSet, save_model

logger = logging.getLogger(__name__)

SMOOTHING = ("none", "deleted-interpolation")


@dataclass
class TrainConfig:
    max_iterations: int = 100
    min_entropy_gain: float = 0.001  # bits/word
    early_stopping: bool = True  # False runs all max_iterations
    smoothing: str = "none"
    constraints: bool = False
    seed: int = 0
    jobs: int = 1
    checkpoint_dir: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.min_entropy_gain < 0:
            raise ConfigError("min_entropy_gain must be non-negative")
        if self.smoothing not in SMOOTHING:
            raise ConfigError(f"smoothing must be one of {SMOOTHING}, got {self.smoothing!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")


@dataclass
class TraceRecord:
    iteration: int
    train_log2_likelihood: float
    heldout_bits_per_word: float
    heldout_skipped: int
    train_skipped: int
    seconds: float


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)
    initial_log2_likelihood: float = float("nan")
    initial_heldout_bits: float = float("nan")
    best_iteration: int = 0
    stop_reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records)

    def log_likelihoods(self) -> list[float]:
        return [self.initial_log2_likelihood] + [r.train_log2_likelihood for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)


# -- expected counts -------------------------------------------------------


@dataclass
class ExpectedCounts:
    """Posterior usage counts laid out like :class:`ParamSet` tables.

    Column 0 of ``left``/``right`` is the no-adjunction count.
    ``occupancy[tree, level]`` is the expected number of visits to that node.
    """

    left: np.ndarray
    right: np.ndarray
    occupancy: np.ndarray
    sentences: int = 0
    skipped: int = 0
    log2_likelihood: float = 0.0

    @classmethod
    def zeros(cls, grammar: Grammar) -> "ExpectedCounts":
        n, D = grammar.n_trees, grammar.depth
        return cls(np.zeros((n, D, len(grammar.left_trees) + 1)),
                   np.zeros((n, D, len(grammar.right_trees) + 1)),
                   np.zeros((n, D)))

    def __iadd__(self, other: "ExpectedCounts"):
        self.left += other.left
        self.right += other.right
        self.occupancy += other.occupancy
        self.sentences += other.sentences
        self.skipped += other.skipped
        self.log2_likelihood += other.log2_likelihood
        return self

    def conservation_error(self, grammar: Grammar) -> float:
        """Largest gap between a site's decision counts and its occupancy."""
        worst = 0.0
        for arr, mask in ((self.left, grammar.has_left), (self.right, grammar.has_right)):
            gap = np.abs(arr.sum(axis=-1) - self.occupancy)
            if mask.any():
                worst = max(worst, float(gap[mask].max()))
        return worst


def _batch_counts(grammar: Grammar, params: ParamSet, tokens, mask) -> ExpectedCounts:
    tab = tables(grammar, params)
    ins = inside_batch(tab, tokens, mask)
    out = outside_batch(ins, want_counts=True)
    C = out.counts
    ec = ExpectedCounts.zeros(grammar)
    ec.left[1:, :, 1:] = C["left"]
    ec.right[1:, :, 1:] = C["right"]
    ec.left[1:, :, 0] = C["left_none"] * grammar.has_left[1:]
    ec.right[1:, :, 0] = C["right_none"] * grammar.has_right[1:]
    ec.occupancy[1:] = C["occupancy"]
    parsed = ins.prob > 0
    ec.left[0, 0, 1:] = C["init_left"]
    ec.right[0, 0, 1:] = C["init_right"]
    if grammar.has_left[0, 0]:
        ec.left[0, 0, 0] = C["init_left_none"]
    if grammar.has_right[0, 0]:
        ec.right[0, 0, 0] = C["init_right_none"]
    ec.occupancy[0, 0] = float(parsed.sum())
    ec.sentences = int(parsed.sum())
    ec.skipped = int((~parsed).sum())
    ec.log2_likelihood = math.fsum(ins.log2_prob()[parsed])
    return ec


def _batch_job(args):
    return _batch_counts(*args)


def accumulate_counts(grammar: Grammar, params: ParamSet, sentences, constraints: bool = False,
                      jobs: int = 1) -> ExpectedCounts:
    """E-step over one sentence or a corpus.

    Batches are formed and merged in a fixed order, so the result does not
    depend on ``jobs``.  Sentences without any derivation (possible under
    bracket constraints) are counted in ``skipped``.
    """
    if isinstance(sentences, Sentence):
        sentences = [sentences]
    work = []
    for _, tokens, mask in batches(grammar, sentences, constraints):
        _check_tokens(grammar, tokens)
        work.append((grammar, params, tokens, mask))
    total = ExpectedCounts.zeros(grammar)
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_batch_job, work))
    else:
        parts = [_batch_job(w) for w in work]
    for part in parts:
        total += part
    if total.skipped:
        logger.warning("%d sentence(s) have no derivation and were skipped", total.skipped)
    return total


# -- M-step ----------------------------------------------------------------


def _normalize_rows(counts, previous, mask):
    out = previous.copy()
    totals = counts.sum(axis=-1)
    live = mask & (totals > 0)
    out[live] = counts[live] / totals[live][:, None]
    starved = int((mask & (totals <= 0)).sum())
    return out, starved


def reestimate(grammar: Grammar, counts: ExpectedCounts, previous: ParamSet) -> ParamSet:
    """Relative-frequency estimate of every site distribution.

    A site that received no mass keeps its previous distribution.
    """
    left, s1 = _normalize_rows(counts.left, previous.left, grammar.has_left)
    right, s2 = _normalize_rows(counts.right, previous.right, grammar.has_right)
    if s1 + s2:
        logger.info("%d site(s) received no expected mass and kept their previous distribution", s1 + s2)
    return ParamSet(previous.start.copy(), left, right)


# -- deleted interpolation -------------------------------------------------


@dataclass(frozen=True)
class Interpolation:
    """Mixture weights (ML, pooled backoff, uniform) per adjunction direction."""

    left: tuple[float, float, float] = (1.0, 0.0, 0.0)
    right: tuple[float, float, float] = (1.0, 0.0, 0.0)


def _components(ml, counts, mask):
    """Stack the three distributions for every row: shape (3, ..., outcomes)."""
    pooled = counts[mask].sum(axis=0) if mask.any() else np.zeros(ml.shape[-1])
    backoff = pooled / pooled.sum() if pooled.sum() > 0 else np.full(ml.shape[-1], 1.0 / ml.shape[-1])
    uniform = np.full(ml.shape[-1], 1.0 / ml.shape[-1])
    return np.stack([ml, np.broadcast_to(backoff, ml.shape), np.broadcast_to(uniform, ml.shape)])


def interpolate(grammar: Grammar, ml: ParamSet, train_counts: ExpectedCounts, lambdas: Interpolation) -> ParamSet:
    out = ml.copy()
    for name, mask, lam in (("left", grammar.has_left, lambdas.left), ("right", grammar.has_right, lambdas.right)):
        table = getattr(ml, name)
        if table.shape[-1] < 2 or not mask.any():
            continue
        comp = _components(table, getattr(train_counts, name), mask)
        mixed = np.tensordot(np.asarray(lam), comp, axes=1)
        getattr(out, name)[mask] = mixed[mask]
    return out


def fit_lambdas(comp: np.ndarray, weights: np.ndarray, start=(0.6, 0.3, 0.1), iterations: int = 200,
                tol: float = 1e-10) -> tuple[float, float, float]:
    """EM for mixture weights given component probabilities of held-out events.

    ``comp`` has shape (3, events) and ``weights`` (events,) holds the
    (expected) held-out count of each event.
    """
    lam = np.asarray(start, dtype=float)
    total = weights.sum()
    if total <= 0:
        return tuple(float(x) for x in lam)
    for _ in range(iterations):
        mix = lam @ comp
        safe = np.where(mix > 0, mix, 1.0)
        resp = lam[:, None] * comp / safe
        new = (resp * weights).sum(axis=1) / total
        if np.abs(new - lam).max() < tol:
            lam = new
            break
        lam = new
    return tuple(float(x) for x in lam / lam.sum())


def fit_interpolation(grammar: Grammar, ml: ParamSet, train_counts: ExpectedCounts, heldout,
                      rounds: int = 2, jobs: int = 1) -> Interpolation:
    """Fit the mixture weights on held-out data.

    Held-out derivations are hidden, so their expected counts are taken
    under the current smoothed model and the weights refitted; a couple of
    rounds settle the weights.
    """
    lambdas = Interpolation((0.6, 0.3, 0.1), (0.6, 0.3, 0.1))
    for _ in range(rounds):
        smoothed = interpolate(grammar, ml, train_counts, lambdas)
        held = accumulate_counts(grammar, smoothed, heldout, jobs=jobs)
        fitted = {}
        for name, mask in (("left", grammar.has_left), ("right", grammar.has_right)):
            table = getattr(ml, name)
            if table.shape[-1] < 2 or not mask.any():
                fitted[name] = (1.0, 0.0, 0.0)
                continue
            comp = _components(table, getattr(train_counts, name), mask)[:, mask]  # (3, rows, outcomes)
            w = getattr(held, name)[mask]
            fitted[name] = fit_lambdas(comp.reshape(3, -1), w.reshape(-1), getattr(lambdas, name))
        lambdas = Interpolation(fitted["left"], fitted["right"])
    return lambdas


# -- driver ----------------------------------------------------------------


def heldout_bits(log2_probs, sentences) -> tuple[float, int]:
    try:
        ce = cross_entropy_from_scores(log2_probs, [len(s) for s in sentences])
    except EvaluationError:
        return math.inf, len(sentences)
    return ce.bits_per_word, ce.skipped


class PltigModel:
    """EM adapter for a template PLTIG."""

    kind = "pltig"

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self.lambdas: Interpolation | None = None

    def e_step(self, params, sentences, constraints=False, jobs=1):
        return accumulate_counts(self.grammar, params, sentences, constraints, jobs)

    def m_step(self, counts, previous):
        return reestimate(self.grammar, counts, previous)

    def log2_probs(self, params, sentences):
        return corpus_log2_probs(self.grammar, params, sentences)

    def smooth(self, params, counts, heldout, jobs=1):
        self.lambdas = fit_interpolation(self.grammar, params, counts, heldout, jobs=jobs)
        return interpolate(self.grammar, params, counts, self.lambdas)

    def save(self, params, path, extra=None):
        extra = dict(extra or {})
        if self.lambdas is not None:
            extra["interpolation"] = asdict(self.lambdas)
        save_model(path, self.grammar, params, extra)


def run_em(model, params, train: Sequence[Sentence], heldout: Sequence[Sentence], config: TrainConfig):
    """Iterate E and M steps until held-out entropy stops improving.

    Returns ``(best parameters, trace)``.  Each trace record holds the train
    log-likelihood and held-out bits/word of the parameters produced by
    that iteration.
    """
    if not train or not heldout:
        raise TrainingError("training and held-out corpora must be non-empty")
    smoothing = config.smoothing == "deleted-interpolation"
    trace = TrainTrace()
    log_fh = open(config.log_path, "w", encoding="utf-8") if config.log_path else None
    ckpt = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
    try:
        t0 = time.perf_counter()
        counts = model.e_step(params, train, config.constraints, config.jobs)
        if counts.sentences == 0:
            raise TrainingError(f"none of the {len(train)} training sentences has a derivation")
        trace.initial_log2_likelihood = counts.log2_likelihood
        scored = model.smooth(params, counts, heldout, config.jobs) if smoothing else params
        best_bits, _ = heldout_bits(model.log2_probs(scored, heldout), heldout)
        trace.initial_heldout_bits = best_bits
        best = scored
        for it in range(1, config.max_iterations + 1):
            params = model.m_step(counts, params)
            counts = model.e_step(params, train, config.constraints, config.jobs)
            if counts.sentences == 0:
                raise TrainingError(f"iteration {it}: no training sentence has a derivation")
            scored = model.smooth(params, counts, heldout, config.jobs) if smoothing else params
            bits, skipped = heldout_bits(model.log2_probs(scored, heldout), heldout)
            rec = TraceRecord(it, counts.log2_likelihood, bits, skipped, counts.skipped,
                              time.perf_counter() - t0)
            trace.records.append(rec)
            logger.info("iteration %d: train log2-lik %.6f, held-out %.6f bits/word", it,
                        rec.train_log2_likelihood, bits)
            if log_fh:
                log_fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
                log_fh.flush()
            if ckpt:
                model.save(scored, ckpt / f"iter{it:03d}.json", {"iteration": it})
            gain = best_bits - bits
            if bits < best_bits or (math.isinf(best_bits) and math.isinf(bits)):
                best_bits, best, trace.best_iteration = bits, scored, it
            if config.early_stopping and gain < config.min_entropy_gain:
                trace.stop_reason = f"held-out gain {gain:.6g} below {config.min_entropy_gain:g}"
                break
        else:
            trace.stop_reason = f"reached max_iterations={config.max_iterations}"
    finally:
        if log_fh:
            log_fh.close()
    return best, trace


def em_train(grammar: Grammar, params: ParamSet, train, heldout, config: TrainConfig | None = None):
    """Train a PLTIG; returns ``(best held-out parameters, TrainTrace)``."""
    return run_em(PltigModel(grammar), params, train, heldout, config or TrainConfig())
