"""Dense Chomsky-normal-form PCFG trained by inside-outside.

Nonterminal 0 is the start symbol.  For each nonterminal ``A`` the binary
rules ``A -> B C`` and lexical rules ``A -> w`` share one distribution.
Charts are batched over equal-length sentences and scaled by
``scale ** width`` like the PLTIG charts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corpus import Sentence, Vocabulary, compatibility_matrix
from ..errors import ConfigError, NoParseError, VocabularyError
from ..training import TrainConfig, run_em

MODEL_FORMAT = "pcfg-model"
MODEL_VERSION = 1
_BATCH_CELLS = 2_000_000


@dataclass
class Pcfg:
    vocab: Vocabulary
    binary: np.ndarray   # (M, M, M)
    lexical: np.ndarray  # (M, V)
    start: int = 0

    @property
    def M(self) -> int:
        return self.binary.shape[0]

    @property
    def V(self) -> int:
        return self.lexical.shape[1]

    def copy(self) -> "Pcfg":
        return Pcfg(self.vocab, self.binary.copy(), self.lexical.copy(), self.start)

    def row_sums(self) -> np.ndarray:
        return self.binary.sum(axis=(1, 2)) + self.lexical.sum(axis=1)


def pcfg_param_count(M: int, V: int) -> int:
    return M**3 + M * V


def pcfg_build(vocab: Vocabulary, M: int, seed: int = 0, low: float = 0.1, high: float = 1.0) -> Pcfg:
    """Every CNF rule over ``M`` nonterminals, with strictly positive random weights."""
    if M < 1:
        raise ConfigError("a PCFG needs at least one nonterminal")
    rng = np.random.default_rng(seed)
    V = len(vocab)
    binary = rng.uniform(low, high, size=(M, M, M))
    lexical = rng.uniform(low, high, size=(M, V))
    z = binary.sum(axis=(1, 2)) + lexical.sum(axis=1)
    return Pcfg(vocab, binary / z[:, None, None], lexical / z[:, None])


def pcfg_validate(g: Pcfg, tol: float = 1e-10) -> list[str]:
    problems = []
    if (g.binary < 0).any() or (g.lexical < 0).any():
        problems.append("negative rule probability")
    for a, total in enumerate(g.row_sums()):
        if abs(total - 1.0) > tol:
            problems.append(f"rules of nonterminal {a} sum to {total!r}")
    return problems


def generator_pcfg(vocab: Vocabulary, M: int, seed: int, lexical_mass: float = 0.6,
                   concentration: float = 0.3) -> Pcfg:
    """Peaked random PCFG for sampling; ``lexical_mass`` above 1/2 keeps trees finite."""
    rng = np.random.default_rng(seed)
    V = len(vocab)
    binary = np.empty((M, M, M))
    lexical = np.empty((M, V))
    for a in range(M):
        binary[a] = (1 - lexical_mass) * rng.dirichlet(np.full(M * M, concentration)).reshape(M, M)
        lexical[a] = lexical_mass * rng.dirichlet(np.full(V, concentration))
    return Pcfg(vocab, binary, lexical)


# -- charts ----------------------------------------------------------------


def _scale(g: Pcfg) -> float:
    return float(g.V + 1)


def _inside(g: Pcfg, tokens: np.ndarray, mask=None):
    B, T = tokens.shape
    c = _scale(g)
    beta = np.zeros((B, g.M, T + 1, T + 1))
    idx = np.arange(T)
    beta[:, :, idx, idx + 1] = c * np.transpose(g.lexical[:, tokens], (1, 0, 2))
    for d in range(2, T + 1):
        s = np.arange(T - d + 1)
        t = s + d
        acc = np.zeros((B, g.M, len(s)))
        for k in range(1, d):
            acc += np.einsum("abc,xbn,xcn->xan", g.binary, beta[:, :, s, s + k], beta[:, :, s + k, t], optimize=True)
        if mask is not None:
            acc *= mask[:, None, s, t]
        beta[:, :, s, t] = acc
    return beta, c


def _outside(g: Pcfg, beta: np.ndarray):
    B, M, S, _ = beta.shape
    T = S - 1
    alpha = np.zeros_like(beta)
    alpha[:, g.start, 0, T] = 1.0
    for d in range(T, 1, -1):
        s = np.arange(T - d + 1)
        t = s + d
        # zero inside means masked or underivable; either way no outside flows through
        a_st = alpha[:, :, s, t] * (beta[:, :, s, t] > 0)
        alpha[:, :, s, t] = a_st
        for k in range(1, d):
            left, right = beta[:, :, s, s + k], beta[:, :, s + k, t]
            alpha[:, :, s, s + k] += np.einsum("abc,xan,xcn->xbn", g.binary, a_st, right, optimize=True)
            alpha[:, :, s + k, t] += np.einsum("abc,xan,xbn->xcn", g.binary, a_st, left, optimize=True)
    return alpha


def _batches(sentences, g: Pcfg, constraints: bool):
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(sentences):
        groups.setdefault(len(s), []).append(i)
    for T, idx in sorted(groups.items()):
        size = max(1, _BATCH_CELLS // (g.M * (T + 1) ** 2))
        for k in range(0, len(idx), size):
            chunk = idx[k : k + size]
            tokens = np.array([sentences[i].tokens for i in chunk])
            if tokens.min() < 0 or tokens.max() >= g.V:
                raise VocabularyError([str(x) for x in np.ravel(tokens) if not 0 <= x < g.V])
            mask = None
            if constraints and any(sentences[i].gold_brackets for i in chunk):
                mask = np.stack([compatibility_matrix(sentences[i]) for i in chunk]).astype(float)
            yield chunk, tokens, mask


def pcfg_log2_probs(g: Pcfg, sentences, constraints: bool = False) -> np.ndarray:
    out = np.empty(len(sentences))
    for chunk, tokens, mask in _batches(sentences, g, constraints):
        beta, c = _inside(g, tokens, mask)
        T = tokens.shape[1]
        with np.errstate(divide="ignore"):
            out[chunk] = np.log2(beta[:, g.start, 0, T]) - T * math.log2(c)
    return out


@dataclass
class PcfgCounts:
    binary: np.ndarray
    lexical: np.ndarray
    sentences: int = 0
    skipped: int = 0
    log2_likelihood: float = 0.0


def pcfg_counts(g: Pcfg, sentences, constraints: bool = False) -> PcfgCounts:
    """Expected rule counts over a corpus."""
    counts = PcfgCounts(np.zeros_like(g.binary), np.zeros_like(g.lexical))
    for chunk, tokens, mask in _batches(sentences, g, constraints):
        beta, c = _inside(g, tokens, mask)
        alpha = _outside(g, beta)
        B, T = tokens.shape
        prob = beta[:, g.start, 0, T]
        ok = prob > 0
        inv = np.where(ok, 1.0 / np.where(ok, prob, 1.0), 0.0)
        counts.sentences += int(ok.sum())
        counts.skipped += int((~ok).sum())
        counts.log2_likelihood += math.fsum(np.log2(prob[ok]) - T * math.log2(c))
        for d in range(2, T + 1):
            s = np.arange(T - d + 1)
            t = s + d
            a_st = alpha[:, :, s, t] * inv[:, None, None]
            for k in range(1, d):
                counts.binary += g.binary * np.einsum(
                    "xan,xbn,xcn->abc", a_st, beta[:, :, s, s + k], beta[:, :, s + k, t], optimize=True)
        idx = np.arange(T)
        post = alpha[:, :, idx, idx + 1] * beta[:, :, idx, idx + 1] * inv[:, None, None]  # (B, M, T)
        onehot = np.eye(g.V)[tokens]  # (B, T, V)
        counts.lexical += np.einsum("xat,xtv->av", post, onehot)
    return counts


def pcfg_reestimate(counts: PcfgCounts, previous: Pcfg) -> Pcfg:
    out = previous.copy()
    totals = counts.binary.sum(axis=(1, 2)) + counts.lexical.sum(axis=1)
    live = totals > 0
    out.binary[live] = counts.binary[live] / totals[live, None, None]
    out.lexical[live] = counts.lexical[live] / totals[live, None]
    return out


# -- Viterbi ---------------------------------------------------------------


def pcfg_viterbi(g: Pcfg, sentence: Sentence):
    """Most probable tree's bracket set (internal spans of width ``2..T-1``).

    Ties go to the lowest rule index ``(B, C)`` and then the leftmost split.
    Returns ``(brackets, log2 score)``.
    """
    tokens = np.asarray(sentence.tokens)
    T = len(tokens)
    M = g.M
    with np.errstate(divide="ignore"):
        lb = np.log(g.binary)
        ll = np.log(g.lexical)
    delta = np.full((M, T + 1, T + 1), -np.inf)
    back = np.zeros((M, T + 1, T + 1), dtype=np.int64)
    idx = np.arange(T)
    delta[:, idx, idx + 1] = ll[:, tokens]
    for d in range(2, T + 1):
        for s in range(T - d + 1):
            t = s + d
            rs = np.arange(s + 1, t)
            left = delta[:, s, rs]          # (B, nr)
            right = delta[:, rs, t]         # (C, nr)
            cand = lb[:, :, :, None] + left[None, :, None, :] + right[None, None, :, :]  # (A, B, C, nr)
            flat = cand.reshape(M, -1)
            k = np.argmax(flat, axis=1)
            delta[:, s, t] = flat[np.arange(M), k]
            back[:, s, t] = k
    score = delta[g.start, 0, T]
    if not np.isfinite(score):
        raise NoParseError("sentence has no parse")
    spans = set()
    nr_of = lambda s, t: t - s - 1  # noqa: E731
    stack = [(g.start, 0, T)]
    while stack:
        a, s, t = stack.pop()
        if t - s < 2:
            continue
        spans.add((s, t))
        k = int(back[a, s, t])
        nr = nr_of(s, t)
        bc, ri = divmod(k, nr)
        b, c = divmod(bc, M)
        r = s + 1 + ri
        stack.append((b, s, r))
        stack.append((c, r, t))
    return {x for x in spans if x[1] - x[0] < T}, float(score / math.log(2))


# -- sampling --------------------------------------------------------------


class _TooLong(Exception):
    pass


def pcfg_sample(g: Pcfg, n: int, seed: int = 0, max_length: int | None = None, max_tries: int = 100_000):
    """``n`` sentences with the spans of their sampled trees as gold brackets."""
    rng = np.random.default_rng(seed)
    M = g.M
    limit = max_length if max_length is not None else 10**9
    probs = np.concatenate([g.binary.reshape(M, -1), g.lexical], axis=1)
    probs = probs / probs.sum(axis=1, keepdims=True)
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise ConfigError("too many rejected PCFG samples; raise the lexical mass")
        tokens: list[int] = []
        spans: set = set()
        try:
            stack = [("expand", g.start, None)]
            starts = []
            while stack:
                op, a, _ = stack.pop()
                if op == "close":
                    spans.add((starts.pop(), len(tokens)))
                    continue
                k = int(rng.choice(probs.shape[1], p=probs[a]))
                if k >= M * M:
                    tokens.append(k - M * M)
                    if len(tokens) > limit:
                        raise _TooLong
                    continue
                b, c = divmod(k, M)
                starts.append(len(tokens))
                stack.extend([("close", None, None), ("expand", c, None), ("expand", b, None)])
        except _TooLong:
            continue
        out.append(Sentence(tuple(tokens), frozenset(x for x in spans if x[1] - x[0] >= 2)))
    return out


# -- model files -----------------------------------------------------------


def pcfg_to_dict(g: Pcfg, extra=None) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "vocabulary": list(g.vocab.symbols),
        "nonterminals": g.M,
        "start": g.start,
        "binary": g.binary.tolist(),
        "lexical": g.lexical.tolist(),
    }
    if extra:
        doc["metadata"] = extra
    return doc


def pcfg_from_dict(doc: dict) -> Pcfg:
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"not a PCFG model file (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported PCFG model version {doc.get('version')!r}")
    g = Pcfg(Vocabulary(doc["vocabulary"]), np.array(doc["binary"], dtype=float),
             np.array(doc["lexical"], dtype=float), int(doc.get("start", 0)))
    if g.binary.shape != (g.M, g.M, g.M) or g.lexical.shape != (g.M, len(g.vocab)):
        raise ConfigError("PCFG rule tables have inconsistent shapes")
    return g


def save_pcfg(path, g: Pcfg, extra=None):
    Path(path).write_text(json.dumps(pcfg_to_dict(g, extra), indent=1) + "\n", encoding="utf-8")


def load_pcfg(path) -> Pcfg:
    return pcfg_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- training --------------------------------------------------------------


class PcfgModel:
    """EM adapter; PCFGs are trained and scored without smoothing."""

    kind = "pcfg"

    def e_step(self, params, sentences, constraints=False, jobs=1):
        return pcfg_counts(params, sentences, constraints)

    def m_step(self, counts, previous):
        return pcfg_reestimate(counts, previous)

    def log2_probs(self, params, sentences):
        return pcfg_log2_probs(params, sentences)

    def smooth(self, params, counts, heldout, jobs=1):
        return params

    def save(self, params, path, extra=None):
        save_pcfg(path, params, extra)


def pcfg_train(g: Pcfg, train, heldout, config: TrainConfig | None = None):
    return run_em(PcfgModel(), g, train, heldout, config or TrainConfig())
