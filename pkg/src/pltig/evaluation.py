"""Scoring: cross-entropy, crossing brackets, paired significance tests and
the text/JSON reports built from them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .corpus import Sentence, crosses
from .errors import EvaluationError

# metric name -> True when lower values are better
LOWER_IS_BETTER = {"cross_entropy": True, "crossing_brackets": False}
DEFAULT_ALPHA = 0.05
NO_VERDICT = "--"


@dataclass(frozen=True)
class CrossEntropy:
    bits_per_word: float
    scored: int
    skipped: int
    tokens: int


def cross_entropy_from_scores(log2_probs: Sequence[float], lengths: Sequence[int]) -> CrossEntropy:
    """Bits per word over sentences with finite scores; the rest are counted as skipped."""
    lp = np.asarray(log2_probs, dtype=float)
    n = np.asarray(lengths, dtype=int)
    if lp.shape != n.shape:
        raise EvaluationError("scores and lengths differ in number")
    if lp.size == 0:
        raise EvaluationError("cannot score an empty corpus")
    ok = np.isfinite(lp)
    if not ok.any():
        raise EvaluationError(f"all {lp.size} sentences have zero probability")
    tokens = int(n[ok].sum())
    return CrossEntropy(float(-math.fsum(lp[ok]) / tokens), int(ok.sum()), int((~ok).sum()), tokens)


def cross_entropy(scorer: Callable[[Sentence], float], corpus: Sequence[Sentence]) -> CrossEntropy:
    return cross_entropy_from_scores([scorer(s) for s in corpus], [len(s) for s in corpus])


def scoring_brackets(brackets: Iterable[tuple[int, int]], T: int) -> set[tuple[int, int]]:
    """Drop the spans that carry no information: single tokens and the whole sentence."""
    return {(s, t) for s, t in brackets if 2 <= t - s < T}


def count_crossings(candidate: Iterable[tuple[int, int]], gold: Iterable[tuple[int, int]]) -> int:
    """Number of candidate brackets crossing at least one gold bracket."""
    gold = list(gold)
    return sum(1 for c in candidate if any(crosses(c, g) for g in gold))


def crossing_brackets(candidates: Sequence[Iterable], golds: Sequence[Iterable], lengths=None,
                      level: str = "bracket") -> float:
    """Percentage of non-crossing candidate brackets.

    ``level="bracket"`` (default) micro-averages over candidate brackets;
    sentences without candidates add nothing.  ``level="sentence"`` gives the
    percentage of sentences with no crossing bracket at all.  With
    ``lengths`` the uninformative spans are filtered from the candidates
    first.  Returns NaN when nothing is scoreable.
    """
    if len(candidates) != len(golds):
        raise EvaluationError("candidate and gold corpora differ in size")
    if level not in ("bracket", "sentence"):
        raise EvaluationError(f"unknown crossing-bracket level {level!r}")
    good = total = 0
    for i, (cand, gold) in enumerate(zip(candidates, golds)):
        cand = set(cand)
        if lengths is not None:
            cand = scoring_brackets(cand, lengths[i])
        bad = count_crossings(cand, gold)
        if level == "bracket":
            good += len(cand) - bad
            total += len(cand)
        else:
            good += bad == 0
            total += 1
    return 100.0 * good / total if total else float("nan")


# -- significance ----------------------------------------------------------


@dataclass(frozen=True)
class TTest:
    mean_difference: float
    t: float
    p: float
    df: int
    verdict: str


def paired_ttest(a: Sequence[float], b: Sequence[float], alpha: float = DEFAULT_ALPHA,
                 lower_is_better: bool = True) -> TTest:
    """Two-sided paired t-test of ``a`` against ``b``.

    The verdict is phrased for ``a``: "better" when the difference is
    significant and favours ``a`` under the metric's orientation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError("paired samples must be one-dimensional and of equal length")
    n = a.size
    if n < 2:
        raise EvaluationError("a paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTest(0.0, 0.0, 1.0, n - 1, NO_VERDICT)
        t, p = math.copysign(math.inf, mean), 0.0
    else:
        t = mean / (sd / math.sqrt(n))
        p = float(2.0 * stats.t.sf(abs(t), n - 1))
    verdict = NO_VERDICT
    if p < alpha:
        a_smaller = mean < 0
        verdict = "better" if a_smaller == lower_is_better else "worse"
    return TTest(mean, t, p, n - 1, verdict)


@dataclass
class SignificanceTable:
    metric: str
    models: list[str]
    alpha: float
    cells: dict = field(default_factory=dict)  # (row, col) -> TTest

    @classmethod
    def build(cls, scores: Mapping[str, Sequence[float]], metric: str = "cross_entropy",
              alpha: float = DEFAULT_ALPHA) -> "SignificanceTable":
        if metric not in LOWER_IS_BETTER:
            raise EvaluationError(f"unknown metric {metric!r}")
        models = list(scores)
        table = cls(metric, models, alpha)
        for a in models:
            for b in models:
                if a != b:
                    table.cells[(a, b)] = paired_ttest(scores[a], scores[b], alpha, LOWER_IS_BETTER[metric])
        return table

    def verdict(self, a: str, b: str) -> str:
        return "" if a == b else self.cells[(a, b)].verdict

    def render(self) -> str:
        width = max([len(m) for m in self.models] + [7])
        head = " " * width + " | " + " | ".join(m.rjust(width) for m in self.models)
        lines = [f"pair-wise t-test on {self.metric} (alpha={self.alpha:g}; row vs column)", head,
                 "-" * len(head)]
        for a in self.models:
            row = [self.verdict(a, b).rjust(width) for b in self.models]
            lines.append(a.ljust(width) + " | " + " | ".join(row))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "alpha": self.alpha,
            "models": self.models,
            "cells": [{"row": a, "col": b, **asdict(r)} for (a, b), r in sorted(self.cells.items())],
        }


# -- reports ---------------------------------------------------------------


@dataclass
class EvalReport:
    model_id: str
    cross_entropy: float
    crossing_bracket_rate: float
    scored: int
    skipped: int
    param_count: int | None = None
    iterations: int | None = None
    seconds: float | None = None
    split: str | None = None

    def __post_init__(self):
        if not math.isnan(self.crossing_bracket_rate) and not 0.0 <= self.crossing_bracket_rate <= 100.0:
            raise EvaluationError("crossing-bracket rate outside [0, 100]")
        if self.cross_entropy < 0:
            raise EvaluationError("negative cross-entropy")


def _mean(values):
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return sum(vals) / len(vals) if vals else None


def summarize(reports: Sequence[EvalReport]) -> dict[str, dict]:
    """Average each model's reports over splits, keeping model order of first appearance."""
    grouped: dict[str, list[EvalReport]] = {}
    for r in reports:
        grouped.setdefault(r.model_id, []).append(r)
    out = {}
    for model, rs in grouped.items():
        out[model] = {
            "splits": len(rs),
            "param_count": rs[0].param_count,
            "iterations": _mean([r.iterations for r in rs]),
            "seconds": _mean([r.seconds for r in rs]),
            "cross_entropy": _mean([r.cross_entropy for r in rs]),
            "crossing_bracket_rate": _mean([r.crossing_bracket_rate for r in rs]),
            "skipped": sum(r.skipped for r in rs),
        }
    return out


def _fmt(value, spec):
    if value is None:
        return "n/a"
    return format(value, spec)


def render_report(reports: Sequence[EvalReport], title: str = "summary") -> str:
    """Aligned text table: one column per model, averaged over splits."""
    summary = summarize(reports)
    models = list(summary)
    rows = [
        ("parameters", "param_count", "d"),
        ("iterations to convergence", "iterations", ".1f"),
        ("real-time (s)", "seconds", ".1f"),
        ("H (bits/word)", "cross_entropy", ".4f"),
        ("crossing bracket (%)", "crossing_bracket_rate", ".2f"),
        ("skipped sentences", "skipped", "d"),
    ]
    label_w = max(len(r[0]) for r in rows)
    col_w = max([len(m) for m in models] + [10])
    lines = [title, " " * label_w + "  " + "  ".join(m.rjust(col_w) for m in models)]
    for label, key, spec in rows:
        cells = [_fmt(summary[m][key], spec).rjust(col_w) for m in models]
        lines.append(label.ljust(label_w) + "  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def report_json(reports: Sequence[EvalReport], significance: Sequence[SignificanceTable] = ()) -> str:
    doc = {
        "reports": [asdict(r) for r in reports],
        "summary": summarize(reports),
        "significance": [t.to_dict() for t in significance],
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"
