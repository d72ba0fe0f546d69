"""Bracketed tag-sequence corpora: loading, splitting and bracket queries.

Two line-oriented formats are supported.  ``bracketed-sexp`` lines are
parenthesized groups of whitespace separated tags, e.g.
``( ( DT NN ) VBZ )``; every pair of parentheses is a gold constituent.
``flat-tags`` lines are bare tag sequences with no structure.
"""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, CorpusFormatError, VocabularyError

logger = logging.getLogger(__name__)

FORMATS = ("bracketed-sexp", "flat-tags")

_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


class Vocabulary:
    """Closed, ordered set of tag symbols."""

    def __init__(self, symbols: Iterable[str]):
        self.symbols = tuple(symbols)
        if not self.symbols:
            raise ConfigError("vocabulary must contain at least one symbol")
        self._index = {sym: i for i, sym in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise ConfigError("vocabulary symbols must be unique")

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    def __hash__(self):
        return hash(self.symbols)

    def __repr__(self):
        return f"Vocabulary({list(self.symbols)!r})"

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise VocabularyError([symbol]) from None

    def encode(self, symbols: Sequence[str]) -> tuple[int, ...]:
        unknown = [s for s in symbols if s not in self._index]
        if unknown:
            raise VocabularyError(unknown)
        return tuple(self._index[s] for s in symbols)

    def decode(self, tokens: Sequence[int]) -> list[str]:
        return [self.symbols[i] for i in tokens]


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[int, ...]
    gold_brackets: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ConfigError("sentence must contain at least one token")
        T = len(self.tokens)
        for s, t in self.gold_brackets:
            if not 0 <= s < t <= T:
                raise ConfigError(f"bracket {(s, t)} outside sentence of length {T}")

    def __len__(self):
        return len(self.tokens)

    @property
    def length(self) -> int:
        return len(self.tokens)

    def without_brackets(self) -> "Sentence":
        return Sentence(self.tokens)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    heldout_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0
    max_length: int | None = None

    def __post_init__(self):
        fractions = (self.train_fraction, self.heldout_fraction, self.test_fraction)
        if any(f < 0 for f in fractions):
            raise ConfigError("split fractions must be non-negative")
        if abs(sum(fractions) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions sum to {sum(fractions)!r}, not 1")
        if self.max_length is not None and self.max_length < 1:
            raise ConfigError("max_length must be positive")


def crosses(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """True iff spans ``a`` and ``b`` overlap without nesting."""
    (s, t), (u, v) = a, b
    return s < u < t < v or u < s < v < t


def span_compatible(sentence: Sentence, span: tuple[int, int]) -> bool:
    return not any(crosses(span, gold) for gold in sentence.gold_brackets)


def compatibility_matrix(sentence: Sentence):
    """Boolean ``(T+1, T+1)`` array; entry ``[s, t]`` tells whether span ``(s, t)``
    crosses no gold bracket.  Entries with ``s >= t`` are True."""
    import numpy as np

    T = len(sentence)
    ok = np.ones((T + 1, T + 1), dtype=bool)
    for a, b in sentence.gold_brackets:
        # (s, t) crosses (a, b) iff s < a < t < b or a < s < b < t
        ok[: a, a + 1 : b] = False
        ok[a + 1 : b, b + 1 :] = False
    return ok


# -- parsing ---------------------------------------------------------------


def parse_bracketed(line: str, lineno: int | None = None):
    """Parse one s-expression line into ``(tags, brackets)``."""
    tags: list[str] = []
    brackets: set[tuple[int, int]] = set()
    stack: list[int] = []
    for tok in _TOKEN_RE.findall(line):
        if tok == "(":
            stack.append(len(tags))
        elif tok == ")":
            if not stack:
                raise CorpusFormatError("unbalanced ')'", lineno)
            start = stack.pop()
            if start == len(tags):
                raise CorpusFormatError("empty constituent '( )'", lineno)
            brackets.add((start, len(tags)))
        else:
            tags.append(tok)
    if stack:
        raise CorpusFormatError("unbalanced '('", lineno)
    if not tags:
        raise CorpusFormatError("empty sentence", lineno)
    return tags, brackets


def parse_flat(line: str, lineno: int | None = None):
    tags = line.split()
    if not tags:
        raise CorpusFormatError("empty sentence", lineno)
    if any(c in line for c in "()"):
        raise CorpusFormatError("parenthesis in flat-tags line", lineno)
    return tags, set()


def read_lines(path, fmt: str):
    """Yield ``(lineno, tags, brackets)`` for each line of a corpus file."""
    if fmt not in FORMATS:
        raise ConfigError(f"unknown corpus format {fmt!r}; expected one of {FORMATS}")
    parse = parse_bracketed if fmt == "bracketed-sexp" else parse_flat
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            yield lineno, *parse(line, lineno)


def load_corpus(path, fmt: str = "bracketed-sexp", vocab: Vocabulary | None = None):
    """Load a corpus file.

    Without ``vocab`` the vocabulary is induced from the data (sorted tag
    set).  With ``vocab`` any tag outside it raises :class:`VocabularyError`.
    """
    rows = list(read_lines(path, fmt))
    if vocab is None:
        vocab = Vocabulary(sorted({tag for _, tags, _ in rows for tag in tags}))
    sentences = []
    for lineno, tags, brackets in rows:
        try:
            tokens = vocab.encode(tags)
        except VocabularyError as exc:
            raise CorpusFormatError(str(exc), lineno) from exc
        sentences.append(Sentence(tokens, frozenset(brackets)))
    logger.info("loaded %d sentences over %d symbols from %s", len(sentences), len(vocab), path)
    return vocab, sentences


def format_bracketed(tags: Sequence[str], brackets: Iterable[tuple[int, int]]) -> str:
    """Render tags with a non-crossing bracket set as an s-expression line."""
    opens: dict[int, list[int]] = {}
    closes: dict[int, int] = {}
    # wider spans open first and close last
    for s, t in sorted(set(brackets), key=lambda b: (b[0], -b[1])):
        opens.setdefault(s, []).append(t)
        closes[t] = closes.get(t, 0) + 1
    out: list[str] = []
    for i, tag in enumerate(tags):
        out.extend("(" for _ in opens.get(i, ()))
        out.append(tag)
        out.extend(")" for _ in range(closes.get(i + 1, 0)))
    return " ".join(out)


def write_corpus(path, vocab: Vocabulary, sentences: Iterable[Sentence], fmt="bracketed-sexp"):
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            tags = vocab.decode(sent.tokens)
            if fmt == "flat-tags":
                fh.write(" ".join(tags) + "\n")
            else:
                fh.write(format_bracketed(tags, sent.gold_brackets) + "\n")


# -- splitting -------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_indices(corpus: Sequence[Sentence], spec: SplitSpec):
    """Return index lists ``(train, heldout, test)`` into ``corpus``.

    The length filter is applied first; survivors are shuffled with
    ``random.Random(spec.seed)`` and cut into contiguous slices.  Train and
    test sizes are rounded half-up and the held-out slice takes the rest.
    """
    if not corpus:
        raise ConfigError("cannot split an empty corpus")
    keep = [i for i, s in enumerate(corpus) if spec.max_length is None or len(s) <= spec.max_length]
    n = len(keep)
    n_train = _round_half_up(spec.train_fraction * n)
    n_test = _round_half_up(spec.test_fraction * n)
    n_heldout = n - n_train - n_test
    sizes = {"train": n_train, "heldout": n_heldout, "test": n_test}
    empty = [name for name, size in sizes.items() if size <= 0]
    if empty:
        raise ConfigError(f"split leaves empty partition(s): {', '.join(empty)} (n={n})")
    order = list(keep)
    random.Random(spec.seed).shuffle(order)
    train = sorted(order[:n_train])
    heldout = sorted(order[n_train : n_train + n_heldout])
    test = sorted(order[n_train + n_heldout :])
    return train, heldout, test


def split_corpus(corpus: Sequence[Sentence], spec: SplitSpec):
    parts = split_indices(corpus, spec)
    return tuple([corpus[i] for i in part] for part in parts)


def write_manifest(path, indices, spec: SplitSpec | None = None):
    """Write a split manifest: one ``name: i j k ...`` line per partition."""
    lines = []
    if spec is not None:
        lines.append(
            f"# seed={spec.seed} train={spec.train_fraction!r} heldout={spec.heldout_fraction!r} "
            f"test={spec.test_fraction!r} max_length={spec.max_length}"
        )
    for name, idx in zip(("train", "heldout", "test"), indices):
        lines.append(f"{name}: " + " ".join(str(i) for i in idx))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    parts = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, rest = line.partition(":")
        parts[name.strip()] = [int(x) for x in rest.split()]
    try:
        return parts["train"], parts["heldout"], parts["test"]
    except KeyError as exc:
        raise CorpusFormatError(f"manifest {path} lacks partition {exc}") from None
