"""Most probable derivation, derived trees and bracket extraction.

The max-product chart mirrors :mod:`pltig.chart` with sums replaced by
maxima, in natural-log space.  Ties go to the first maximum found, which
means the lowest tree id when choosing an adjoined tree and the leftmost
split when choosing a breaking point.  Between adjunction states the order
of preference is none, L, R, LR.

A :class:`Derivation` is a flat list of adjunction records.  The derived
tree is rebuilt from those records alone, so it can be checked against
derivations produced elsewhere (samplers, enumerators).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chart import tables
from .corpus import Sentence, compatibility_matrix
from .errors import NoParseError, UsageError
from .grammar import NONTERMINAL, Grammar, ParamSet

LOG2E = 1.0 / math.log(2.0)
_STATE_NAMES = ("none", "L", "R", "LR")


@dataclass(frozen=True)
class Adjunction:
    """One adjunction in a derivation.

    ``host`` is ``(instance, node id)`` of the receiving node.  ``span`` is
    ``(s, r, t)``: the host cell at the time of adjunction covers ``(s, t)``
    and the adjoined tree yields ``(s, r)`` for a left tree or ``(r, t)`` for
    a right tree.  When a node takes both, the right tree adjoins first, so
    the left record's cell is the wider one.
    """

    host: tuple[int, tuple[int, int]]
    direction: str
    tree: int
    instance: int
    span: tuple[int, int, int]

    @property
    def yield_span(self) -> tuple[int, int]:
        s, r, t = self.span
        return (s, r) if self.direction == "L" else (r, t)


@dataclass
class Derivation:
    root: int
    length: int
    adjunctions: list[Adjunction] = field(default_factory=list)
    score: float = -math.inf  # log2 probability

    def instances(self) -> dict[int, int]:
        """Map instance number to tree id."""
        out = {0: self.root}
        for adj in self.adjunctions:
            out[adj.instance] = adj.tree
        return out

    def at(self, instance: int, node) -> dict[str, Adjunction]:
        return {a.direction: a for a in self.adjunctions if a.host == (instance, tuple(node))}


@dataclass
class DerivedNode:
    label: str
    span: tuple[int, int]
    children: list["DerivedNode"] = field(default_factory=list)

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def leaves(self) -> list[str]:
        if not self.children:
            return [self.label]
        return [leaf for c in self.children for leaf in c.leaves()]

    def sexp(self) -> str:
        if not self.children:
            return self.label
        return "(" + self.label + " " + " ".join(c.sexp() for c in self.children) + ")"


# -- derived trees ----------------------------------------------------------


def derived_tree(grammar: Grammar, derivation: Derivation) -> DerivedNode:
    """Perform every adjunction of ``derivation`` and return the derived tree.

    Empty leaves are kept (labelled ``<eps>``) so spans stay exact; foot
    nodes disappear because each is identified with the node it replaced.
    """
    index: dict = {}
    for adj in derivation.adjunctions:
        index.setdefault(adj.host, {})[adj.direction] = adj
    kinds = derivation.instances()

    def spine(instance: int, pos: int, s: int, t: int) -> DerivedNode:
        tree = grammar.trees[kinds[instance]]
        node = tree.nodes[pos]
        adj = index.get((instance, node.id), {})
        left, right = adj.get("L"), adj.get("R")
        cs, ct = s, t
        if left is not None:
            cs = left.span[1]
        if right is not None:
            ct = right.span[1]
        inner = DerivedNode(node.label, (cs, ct), [child(instance, c, cs, ct) for c in node.children])
        if right is not None:
            rs, rr, rt = right.span
            inner = DerivedNode(NONTERMINAL, (rs, rt), [inner, spine(right.instance, 1, rr, rt)])
        if left is not None:
            ls, lr, lt = left.span
            inner = DerivedNode(NONTERMINAL, (ls, lt), [spine(left.instance, 1, ls, lr), inner])
        return inner

    def child(instance: int, pos: int, s: int, t: int) -> DerivedNode:
        tree = grammar.trees[kinds[instance]]
        node = tree.nodes[pos]
        if node.is_leaf:
            return DerivedNode(node.label, (s, t))
        return spine(instance, pos, s, t)

    root_tree = grammar.trees[derivation.root]
    T = derivation.length
    return DerivedNode(root_tree.root.label, (0, T), [spine(0, 1, 0, T)])


def tree_brackets(tree: DerivedNode, T: int) -> set[tuple[int, int]]:
    return {n.span for n in tree.walk() if n.children and 2 <= n.span[1] - n.span[0] < T}


def extract_brackets(grammar: Grammar, derivation: Derivation, sentence: Sentence | None = None) -> set:
    """Spans of internal derived-tree nodes with width in ``[2, T)``."""
    T = derivation.length if sentence is None else len(sentence)
    if sentence is not None and T != derivation.length:
        raise UsageError("derivation and sentence lengths differ")
    return tree_brackets(derived_tree(grammar, derivation), T)


def derivation_log2_prob(grammar: Grammar, params: ParamSet, derivation: Derivation) -> float:
    """Score a derivation directly from its records (log2)."""
    kinds = derivation.instances()
    index: dict = {}
    for adj in derivation.adjunctions:
        index.setdefault(adj.host, {})[adj.direction] = adj
    total = math.log2(params.start[derivation.root]) if params.start[derivation.root] > 0 else -math.inf
    for inst, tid in kinds.items():
        for node in grammar.trees[tid].nodes:
            adj = index.get((inst, node.id), {})
            terms = []
            if node.has_left_site:
                terms.append(params.p_left(grammar, node.id, adj["L"].tree) if "L" in adj else params.no_left(node.id))
            if node.has_right_site:
                terms.append(params.p_right(grammar, node.id, adj["R"].tree) if "R" in adj else params.no_right(node.id))
            if "L" in adj and "R" in adj:
                terms.append(grammar.lr_weight)
            for p in terms:
                total += math.log2(p) if p > 0 else -math.inf
    return total


# -- max-product chart ------------------------------------------------------


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=float))


class ViterbiChart:
    """Max-product chart of one sentence, natural-log space."""

    def __init__(self, grammar: Grammar, params: ParamSet, sentence: Sentence, constraints=False):
        tab = tables(grammar, params)
        self.grammar, self.tab = grammar, tab
        tokens = np.asarray(sentence.tokens, dtype=int)
        if np.any((tokens < 0) | (tokens >= grammar.V)):
            raise UsageError("token outside the vocabulary")
        T = len(tokens)
        S = T + 1
        nA, D = tab.nA, tab.D
        self.T = T
        lnl, lnr = _log(tab.nl_), _log(tab.nr_)
        lpl, lpr = _log(tab.pl), _log(tab.pr)
        lw = float(_log(tab.w))
        neg = -np.inf
        shape = (nA, D, S, S)
        core, left, right, both, full, bl, br = (np.full(shape, neg) for _ in range(7))
        ints = lambda: np.zeros(shape, dtype=np.int32)  # noqa: E731
        self.left_split, self.right_split, self.both_split = ints(), ints(), ints()
        self.bl_arg, self.br_arg, self.state = ints(), ints(), ints()
        bad = None
        if constraints and sentence.gold_brackets:
            bad = ~compatibility_matrix(sentence)
        for d in range(1, T + 1):
            s = np.arange(T - d + 1)
            t = s + d
            for j in reversed(range(D)):
                if j == D - 1:
                    if d == 1:
                        core[:, j, s, t] = np.where(tokens[None, :] == tab.anchor[:, None], 0.0, neg)
                else:
                    core[:, j, s, t] = full[:, j + 1, s, t]
                if d >= 2:
                    R = s[:, None] + np.arange(1, d)[None, :]
                    Sb, Tb = s[:, None], t[:, None]
                    blj, brj, cj = bl[:, j], br[:, j], core[:, j]
                    cand = blj[:, Sb, R] + cj[:, R, Tb]
                    k = np.argmax(cand, axis=-1)
                    left[:, j, s, t] = np.take_along_axis(cand, k[..., None], -1)[..., 0]
                    self.left_split[:, j, s, t] = R[np.arange(len(s)), k]
                    cand = cj[:, Sb, R] + brj[:, R, Tb]
                    k = np.argmax(cand, axis=-1)
                    right[:, j, s, t] = np.take_along_axis(cand, k[..., None], -1)[..., 0]
                    self.right_split[:, j, s, t] = R[np.arange(len(s)), k]
                    if bad is not None:
                        right[:, j, s, t] = np.where(bad[s, t], neg, right[:, j, s, t])
                    cand = blj[:, Sb, R] + right[:, j][:, R, Tb]
                    k = np.argmax(cand, axis=-1)
                    both[:, j, s, t] = np.take_along_axis(cand, k[..., None], -1)[..., 0]
                    self.both_split[:, j, s, t] = R[np.arange(len(s)), k]
                options = np.stack([
                    lnl[:, j, None] + lnr[:, j, None] + core[:, j, s, t],
                    lnr[:, j, None] + left[:, j, s, t],
                    lnl[:, j, None] + right[:, j, s, t],
                    lw + both[:, j, s, t],
                ])
                k = np.argmax(options, axis=0)
                self.state[:, j, s, t] = k
                full[:, j, s, t] = np.take_along_axis(options, k[None], 0)[0]
                if bad is not None:
                    full[:, j, s, t] = np.where(bad[s, t], neg, full[:, j, s, t])
            roots = full[:, 0, s, t]  # (nA, ns)
            for lp, idx, best, arg in ((lpl, tab.left_idx, bl, self.bl_arg), (lpr, tab.right_idx, br, self.br_arg)):
                if len(idx) == 0:
                    continue
                cand = lp[..., None] + roots[idx][None, None]  # (nA, D, n_dir, ns)
                k = np.argmax(cand, axis=2)
                best[:, :, s, t] = np.take_along_axis(cand, k[:, :, None], 2)[:, :, 0]
                arg[:, :, s, t] = k
        self.core, self.left, self.right, self.both, self.full, self.bl, self.br = core, left, right, both, full, bl, br

        # initial tree: its spine node has an empty core at (T, T) or (0, 0)
        lroots = full[tab.left_idx, 0, 0, :]          # (nL, S): left tree over (0, r)
        rroots = full[:, 0, :, T][tab.right_idx]      # (nR, S): right tree over (r, T)
        bl0 = np.vstack([np.full((1, S), neg), _log(tab.pl0)[:, None] + lroots])
        br0 = np.vstack([np.full((1, S), neg), _log(tab.pr0)[:, None] + rroots])
        if bad is not None:
            br0[:, bad[:, T]] = neg
        # row 0 is a -inf sentinel so empty directions still reduce; shift ids back
        self.bl0_arg, self.br0_arg = np.argmax(bl0, axis=0) - 1, np.argmax(br0, axis=0) - 1
        bl0m, br0m = bl0.max(axis=0), br0.max(axis=0)
        lnl0, lnr0 = float(_log(tab.nl0)), float(_log(tab.nr0))
        pair = bl0m[1:T] + br0m[1:T]
        self.init_split = 1 + int(np.argmax(pair)) if T >= 2 else 0
        options = [
            lnl0 + lnr0 if T == 0 else neg,
            lnr0 + bl0m[T],
            lnl0 + br0m[0],
            lw + (pair.max() if T >= 2 else neg),
        ]
        self.init_state = int(np.argmax(options))
        self.log_prob = float(_log(tab.p_start)) + options[self.init_state]

    @property
    def log2_score(self) -> float:
        return self.log_prob * LOG2E

    # -- backtrace ---------------------------------------------------------
    def derivation(self) -> Derivation:
        if not np.isfinite(self.log_prob):
            raise NoParseError("sentence has no derivation with nonzero probability")
        g, tab, T = self.grammar, self.tab, self.T
        deriv = Derivation(root=g.initial, length=T, score=self.log2_score)
        counter = [0]
        init_node = g.trees[g.initial].nodes[1].id
        lid = [g.left_trees[i] for i in range(len(g.left_trees))]
        rid = [g.right_trees[i] for i in range(len(g.right_trees))]

        def adjoin(host, direction, tree_id, span):
            counter[0] += 1
            inst = counter[0]
            deriv.adjunctions.append(Adjunction(host, direction, tree_id, inst, span))
            a = tree_id - 1
            ys, yt = (span[0], span[1]) if direction == "L" else (span[1], span[2])
            visit(inst, a, 0, ys, yt)

        def visit(inst, a, j, s, t):
            # instances are numbered in yield order: left tree, deeper spine, right tree
            node_id = (a + 1, j + 1)
            host = (inst, node_id)
            state = _STATE_NAMES[self.state[a, j, s, t]]
            lrec = rrec = None
            cs, ct = s, t
            if state == "LR":
                r1 = int(self.both_split[a, j, s, t])
                r2 = int(self.right_split[a, j, r1, t])
                lrec = (lid[self.bl_arg[a, j, s, r1]], (s, r1, t))
                rrec = (rid[self.br_arg[a, j, r2, t]], (r1, r2, t))
                cs, ct = r1, r2
            elif state == "L":
                r = int(self.left_split[a, j, s, t])
                lrec = (lid[self.bl_arg[a, j, s, r]], (s, r, t))
                cs = r
            elif state == "R":
                r = int(self.right_split[a, j, s, t])
                rrec = (rid[self.br_arg[a, j, r, t]], (s, r, t))
                ct = r
            if lrec is not None:
                adjoin(host, "L", *lrec)
            if j + 1 < tab.D:
                visit(inst, a, j + 1, cs, ct)
            if rrec is not None:
                adjoin(host, "R", *rrec)

        state = _STATE_NAMES[self.init_state]
        host = (0, init_node)
        if state == "L":
            adjoin(host, "L", lid[self.bl0_arg[T]], (0, T, T))
        elif state == "R":
            adjoin(host, "R", rid[self.br0_arg[0]], (0, 0, T))
        elif state == "LR":
            r = self.init_split
            adjoin(host, "L", lid[self.bl0_arg[r]], (0, r, T))
            adjoin(host, "R", rid[self.br0_arg[r]], (r, r, T))
        deriv.adjunctions.sort(key=lambda x: x.instance)
        return deriv


def viterbi_parse(grammar: Grammar, params: ParamSet, sentence: Sentence, constraints=False) -> Derivation:
    """Most probable derivation of ``sentence``; raises :class:`NoParseError` when none exists."""
    return ViterbiChart(grammar, params, sentence, constraints).derivation()


def parse_brackets(grammar: Grammar, params: ParamSet, sentence: Sentence) -> set:
    return extract_brackets(grammar, viterbi_parse(grammar, params, sentence), sentence)


