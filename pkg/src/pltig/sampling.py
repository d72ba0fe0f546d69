"""Sampling sentences, with their derived-tree brackets, from a PLTIG.

Sites are visited top-down and each one independently picks "no
adjunction" or a tree.  A node that picks both a left and a right tree is
kept only with probability ``lr_weight``, which makes the accepted
derivations follow the model's own (down-weighted) derivation scores
exactly, up to normalization.  Derivations longer than ``max_length`` are
rejected as a whole.
"""

from __future__ import annotations

import numpy as np

from .corpus import Sentence
from .errors import ConfigError
from .grammar import Grammar, ParamSet, empty_params
from .viterbi import Adjunction, Derivation, derived_tree

_MAX_TRIES = 10_000


class _Reject(Exception):
    pass


def generator_params(grammar: Grammar, seed: int, adjoin: float = 0.3, initial_adjoin: float = 0.9,
                     concentration: float = 0.5) -> ParamSet:
    """Random parameters suited to sampling.

    Every auxiliary-tree site adjoins with probability ``adjoin`` and the
    initial tree's sites with ``initial_adjoin``; which tree adjoins is drawn
    from a symmetric Dirichlet with the given concentration, so small values
    give peaked, learnable distributions.  Keep ``adjoin`` times the number
    of sites per tree below 1 or sampled sentences grow without bound.
    """
    if not 0 < adjoin < 1 or not 0 < initial_adjoin < 1:
        raise ConfigError("adjunction probabilities must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    p = empty_params(grammar)
    p.start[grammar.initial] = 1.0
    for tid, pos in grammar.site_nodes():
        node = grammar.node((tid, pos))
        mass = initial_adjoin if tid == grammar.initial else adjoin
        for table, has, n in ((p.left, node.has_left_site, len(grammar.left_trees)),
                              (p.right, node.has_right_site, len(grammar.right_trees))):
            if has and n:
                table[tid, pos - 1, 0] = 1.0 - mass
                table[tid, pos - 1, 1:] = mass * rng.dirichlet(np.full(n, concentration))
    return p


class Sampler:
    def __init__(self, grammar: Grammar, params: ParamSet, seed: int = 0, max_length: int | None = None):
        self.g, self.p = grammar, params
        self.rng = np.random.default_rng(seed)
        self.max_length = max_length
        self.rejected = 0

    def _choose(self, row) -> int:
        return int(self.rng.choice(len(row), p=row / row.sum()))

    def _expand(self, tid: int, budget: list[int]):
        """Nested choice record ``(tid, [(left, right) per spine node])``."""
        tree = self.g.trees[tid]
        if tid != self.g.initial:
            budget[0] -= 1
            if budget[0] < 0:
                raise _Reject
        picks = []
        for node in tree.spine:
            j = node.position - 1
            left = right = None
            if node.has_left_site:
                k = self._choose(self.p.left[tid, j])
                left = self.g.left_trees[k - 1] if k else None
            if node.has_right_site:
                k = self._choose(self.p.right[tid, j])
                right = self.g.right_trees[k - 1] if k else None
            if left is not None and right is not None and self.rng.random() >= self.g.lr_weight:
                raise _Reject
            picks.append((left, right))
        # expand children after this tree's own choices so rejection is cheap
        return tid, [(None if l is None else self._expand(l, budget),
                      None if r is None else self._expand(r, budget)) for l, r in picks]

    def sample(self) -> tuple[tuple[int, ...], Derivation]:
        limit = self.max_length if self.max_length is not None else 10**9
        for _ in range(_MAX_TRIES):
            try:
                record = self._expand(self.g.initial, [limit])
            except _Reject:
                self.rejected += 1
                continue
            tokens, deriv = self._lay_out(record)
            if tokens:
                return tokens, deriv
            self.rejected += 1
        raise ConfigError(f"no sentence accepted in {_MAX_TRIES} tries; lower the adjunction mass")

    def _lay_out(self, record):
        g = self.g
        tokens: list[int] = []
        adjs: list[Adjunction] = []
        counter = [0]

        def place(rec, inst):
            tid, picks = rec
            tree = g.trees[tid]
            spine = tree.spine

            def level(j):
                node = spine[j]
                left, right = picks[j]
                s = len(tokens)
                lnum = rnum = None
                if left is not None:
                    counter[0] += 1
                    lnum = counter[0]
                    place(left, lnum)
                r1 = len(tokens)
                if j + 1 < len(spine):
                    level(j + 1)
                elif tree.anchor is not None:
                    tokens.append(tree.anchor)
                r2 = len(tokens)
                if right is not None:
                    counter[0] += 1
                    rnum = counter[0]
                    place(right, rnum)
                t = len(tokens)
                if lnum is not None:
                    adjs.append(Adjunction((inst, node.id), "L", left[0], lnum, (s, r1, t)))
                if rnum is not None:
                    adjs.append(Adjunction((inst, node.id), "R", right[0], rnum, (r1, r2, t)))

            level(0)

        place(record, 0)
        adjs.sort(key=lambda a: a.instance)
        return tuple(tokens), Derivation(root=g.initial, length=len(tokens), adjunctions=adjs)


def gold_brackets(grammar: Grammar, derivation: Derivation) -> frozenset:
    """Every derived-tree constituent of width two or more, the full span included."""
    tree = derived_tree(grammar, derivation)
    return frozenset(n.span for n in tree.walk() if n.children and n.span[1] - n.span[0] >= 2)


def sample_corpus(grammar: Grammar, params: ParamSet, n: int, seed: int = 0,
                  max_length: int | None = None) -> list[Sentence]:
    """``n`` sentences with gold brackets read off their sampled derivations."""
    sampler = Sampler(grammar, params, seed, max_length)
    out = []
    for _ in range(n):
        tokens, deriv = sampler.sample()
        out.append(Sentence(tokens, gold_brackets(grammar, deriv)))
    return out
