"""Bigram/trigram models with deleted interpolation, and the right-branching
bracketing heuristic used alongside them.

Histories are padded with a start symbol.  By default every sentence also
predicts an end-of-sentence event, which puts the n-gram on the same
footing as the grammars: a PLTIG pays for stopping through its
no-adjunction masses, so a bigram without that event would not be the
model the bigram template simulates.  ``eos=False`` scores observed
tokens only.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import Sentence, Vocabulary
from ..errors import ConfigError

MODEL_FORMAT = "ngram-model"
MODEL_VERSION = 1
BOS = -1  # history padding
PERIOD_TAGS = (".",)


def ngram_param_count(V: int, N: int) -> int:
    """Fitted size formula ``V * ((V+1)^(N-1) + 1)``; it reproduces the
    standard bigram/trigram sizes at V=32 and V=48 but is not a derivation of them."""
    return V * ((V + 1) ** (N - 1) + 1)


@dataclass
class NgramModel:
    vocab: Vocabulary
    order: int
    eos: bool = True
    # counts[k][history tuple of length k][outcome] for k = 0..order-1
    counts: list = field(default_factory=list)
    lambdas: tuple = ()  # weights for (order, order-1, ..., unigram, uniform)

    @property
    def outcomes(self) -> int:
        return len(self.vocab) + (1 if self.eos else 0)

    @property
    def eos_index(self) -> int:
        return len(self.vocab)

    def _events(self, sentence: Sentence):
        seq = list(sentence.tokens) + ([self.eos_index] if self.eos else [])
        hist = [BOS] * (self.order - 1) + list(sentence.tokens)
        for i, w in enumerate(seq):
            yield tuple(hist[i : i + self.order - 1]), w

    def components(self, history: tuple, w: int) -> list[float | None]:
        """ML estimate of each order, longest history first, then uniform.

        ``None`` marks an order whose history was never seen.
        """
        out: list[float | None] = []
        for k in range(self.order - 1, -1, -1):
            h = history[len(history) - k :] if k else ()
            table = self.counts[k].get(h)
            if not table:
                out.append(None)
                continue
            out.append(table.get(w, 0) / sum(table.values()))
        out.append(1.0 / self.outcomes)
        return out

    def prob(self, history: tuple, w: int) -> float:
        comps = self.components(history, w)
        lam = [l for l, c in zip(self.lambdas, comps) if c is not None]
        vals = [c for c in comps if c is not None]
        z = sum(lam)
        if z <= 0:
            return 0.0
        return sum(l * v for l, v in zip(lam, vals)) / z

    def log2_prob(self, sentence: Sentence) -> float:
        total = 0.0
        for h, w in self._events(sentence):
            p = self.prob(h, w)
            if p <= 0:
                return -math.inf
            total += math.log2(p)
        return total

    def log2_probs(self, sentences: Sequence[Sentence]) -> np.ndarray:
        return np.array([self.log2_prob(s) for s in sentences])


def _count(model: NgramModel, corpus: Sequence[Sentence]):
    counts = [defaultdict(Counter) for _ in range(model.order)]
    for sent in corpus:
        for h, w in model._events(sent):
            for k in range(model.order):
                counts[k][h[len(h) - k :] if k else ()][w] += 1
    return [{h: dict(c) for h, c in level.items()} for level in counts]


def fit_ngram_lambdas(model: NgramModel, heldout: Sequence[Sentence], iterations: int = 500,
                      tol: float = 1e-12) -> tuple:
    """Deleted-interpolation weights by EM on held-out events.

    Orders whose history is unseen for an event drop out of that event's
    mixture and the remaining weights are renormalized.
    """
    rows = []
    for sent in heldout:
        for h, w in model._events(sent):
            rows.append(model.components(h, w))
    n = model.order + 1
    lam = np.full(n, 1.0 / n)
    if not rows:
        return tuple(lam)
    comp = np.array([[0.0 if c is None else c for c in r] for r in rows])
    avail = np.array([[c is not None for c in r] for r in rows], dtype=float)
    for _ in range(iterations):
        weights = lam * avail
        weights /= weights.sum(axis=1, keepdims=True)
        mix = (weights * comp).sum(axis=1, keepdims=True)
        resp = np.where(mix > 0, weights * comp / np.where(mix > 0, mix, 1.0), 0.0)
        # an event's responsibility spreads over the orders available to it;
        # normalizing per order by its exposure gives the renormalized EM update
        num = resp.sum(axis=0)
        new = num / num.sum() if num.sum() > 0 else lam
        if np.abs(new - lam).max() < tol:
            lam = new
            break
        lam = new
    return tuple(float(x) for x in lam)


def ngram_train(corpus: Sequence[Sentence], vocab: Vocabulary, order: int = 2,
                heldout: Sequence[Sentence] | None = None, smoothing: str = "deleted-interpolation",
                eos: bool = True) -> NgramModel:
    """Count n-grams; with smoothing the interpolation weights come from ``heldout``.

    ``smoothing="none"`` gives the plain maximum-likelihood model.
    """
    if order not in (2, 3):
        raise ConfigError("n-gram order must be 2 or 3")
    if not corpus:
        raise ConfigError("cannot train an n-gram model on an empty corpus")
    model = NgramModel(vocab, order, eos)
    model.counts = _count(model, corpus)
    if smoothing == "none":
        model.lambdas = (1.0,) + (0.0,) * order
    elif smoothing == "deleted-interpolation":
        if not heldout:
            raise ConfigError("deleted interpolation needs held-out data")
        model.lambdas = fit_ngram_lambdas(model, heldout)
    else:
        raise ConfigError(f"unknown smoothing {smoothing!r}")
    return model


# -- model files -----------------------------------------------------------


def _key(h: tuple) -> str:
    return " ".join(str(x) for x in h)


def ngram_to_dict(model: NgramModel, extra=None) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "vocabulary": list(model.vocab.symbols),
        "order": model.order,
        "eos": model.eos,
        "lambdas": list(model.lambdas),
        "counts": [{_key(h): {str(w): c for w, c in sorted(t.items())} for h, t in sorted(level.items())}
                   for level in model.counts],
    }
    if extra:
        doc["metadata"] = extra
    return doc


def ngram_from_dict(doc: dict) -> NgramModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"not an n-gram model file (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported n-gram model version {doc.get('version')!r}")
    counts = []
    for level in doc["counts"]:
        counts.append({tuple(int(x) for x in h.split()): {int(w): c for w, c in t.items()}
                       for h, t in level.items()})
    return NgramModel(Vocabulary(doc["vocabulary"]), int(doc["order"]), bool(doc["eos"]), counts,
                      tuple(doc["lambdas"]))


def save_ngram(path, model: NgramModel, extra=None):
    Path(path).write_text(json.dumps(ngram_to_dict(model, extra), indent=1) + "\n", encoding="utf-8")


def load_ngram(path) -> NgramModel:
    return ngram_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- bracketing heuristic --------------------------------------------------


def right_branching_brackets(tags: Sequence[str], period_tags=PERIOD_TAGS) -> set[tuple[int, int]]:
    """Right-branching spans ``(i, T')`` for ``1 <= i <= T'-2``.

    ``T'`` leaves out one trailing period tag, which attaches high, above
    every bracket.
    """
    T = len(tags)
    end = T - 1 if T and tags[-1] in period_tags else T
    return {(i, end) for i in range(1, end - 1)}
