"""Inside and outside charts for template PLTIGs.

All auxiliary trees of a template share one chain topology, so the chart
stores, per auxiliary tree ``a`` and spine level ``j``, five span tables:

``core``   e(s,t,eta,0): the node's children generate ``O[s:t]``
``left``   e(s,t,eta,L): one left auxiliary tree in front of the core
``right``  e(s,t,eta,R): one right auxiliary tree behind the core
``both``   e(s,t,eta,LR): one of each
``full``   the combined (normalized-sum) probability of the node

``full`` at level 0 is also the yield probability of the tree's root.
``bl[a, j, s, r]`` caches ``sum_rho P_L(eta, rho) * full_root(s, r, rho)``
(``br`` likewise), which reduces the doubly nested left+right sum to

    e(s,t,eta,LR) = sum_r bl(s,r) * e(r,t,eta,R)

and keeps the whole chart at O(T^3) work.  The left tree of a
simultaneous adjunction is therefore the outer one in the derived tree;
with bracket constraints, the intermediate (core + right tree) span must
also be compatible.

Cells are kept in linear space and scaled by ``scale ** width``.  Every
recursion splits a span into pieces whose widths add up, so scaled values
satisfy the same recursions and the scale cancels in every ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Sentence, compatibility_matrix
from .errors import PltigError, UsageError, VocabularyError
from .grammar import Grammar, ParamSet, TreeKind

STATES = ("none", "L", "R", "LR")

# token value that matches every anchor; summing over it marginalizes the string
WILDCARD = -1

# chart cells allowed in flight per batch (five-plus span tables each)
_BATCH_CELLS = 4_000_000


@dataclass
class Tables:
    """Parameter arrays laid out for the chart code."""

    grammar: Grammar
    params: ParamSet
    nl_: np.ndarray = field(init=False)  # (nA, D)  P_NL
    nr_: np.ndarray = field(init=False)
    pl: np.ndarray = field(init=False)   # (nA, D, nL)
    pr: np.ndarray = field(init=False)   # (nA, D, nR)

    def __post_init__(self):
        g, p = self.grammar, self.params
        aux = [t.id for t in g.trees if t.kind is not TreeKind.INITIAL]
        if aux != list(range(1, g.n_trees)) or g.initial_trees != (0,):
            raise PltigError("chart expects tree 0 initial and trees 1.. auxiliary")
        if any(g.trees[a].depth != g.depth for a in aux):
            raise PltigError("chart expects auxiliary trees of equal depth")
        if g.trees[0].depth != 1:
            raise PltigError("chart expects a one-node spine on the initial tree")
        self.nA = len(aux)
        self.D = g.depth
        self.left_idx = np.array([t - 1 for t in g.left_trees], dtype=int)
        self.right_idx = np.array([t - 1 for t in g.right_trees], dtype=int)
        self.anchor = np.array([g.trees[a].anchor for a in aux], dtype=int)
        self.nl_ = p.left[1:, :, 0]
        self.nr_ = p.right[1:, :, 0]
        self.pl = p.left[1:, :, 1:]
        self.pr = p.right[1:, :, 1:]
        self.nl0 = float(p.left[0, 0, 0])
        self.nr0 = float(p.right[0, 0, 0])
        self.pl0 = p.left[0, 0, 1:]
        self.pr0 = p.right[0, 0, 1:]
        self.p_start = float(p.start[0])
        self.w = g.lr_weight


def tables(grammar: Grammar, params: ParamSet) -> Tables:
    return Tables(grammar, params)


def default_scale(grammar: Grammar) -> float:
    return float(grammar.V + 1)


def _check_tokens(grammar, tokens):
    bad = [t for t in np.ravel(tokens) if not 0 <= t < grammar.V]
    if bad:
        raise VocabularyError([str(t) for t in bad])


@dataclass
class InsideBatch:
    """Inside tables for ``B`` sentences of equal length ``T``."""

    tab: Tables
    tokens: np.ndarray       # (B, T)
    mask: np.ndarray | None  # (B, S, S) of 0/1, None when unconstrained
    scale: float
    core: np.ndarray         # (B, nA, D, S, S)
    left: np.ndarray
    right: np.ndarray
    both: np.ndarray
    full: np.ndarray
    bl: np.ndarray
    br: np.ndarray
    init_left: np.ndarray    # (B,) e(0,T,init,L) etc., scaled
    init_right: np.ndarray
    init_both: np.ndarray
    prob: np.ndarray         # (B,) scaled sentence probability
    cell_updates: int = 0

    @property
    def T(self) -> int:
        return self.tokens.shape[1]

    @property
    def B(self) -> int:
        return self.tokens.shape[0]

    def log2_prob(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log2(self.prob) - self.T * np.log2(self.scale)

    def aux_roots(self) -> np.ndarray:
        return self.full[:, :, 0]


def inside_batch(tab: Tables, tokens, mask=None, scale=None) -> InsideBatch:
    tokens = np.asarray(tokens, dtype=int)
    B, T = tokens.shape
    if T == 0:
        raise UsageError("empty sentence")
    S = T + 1
    nA, D, w = tab.nA, tab.D, tab.w
    c = default_scale(tab.grammar) if scale is None else float(scale)
    shape = (B, nA, D, S, S)
    core, left, right, both, full, bl, br = (np.zeros(shape) for _ in range(7))
    nl = tab.nl_[None, :, :, None]
    nr = tab.nr_[None, :, :, None]
    m = None if mask is None else mask.astype(float)
    updates = 0
    for d in range(1, T + 1):
        s = np.arange(T - d + 1)
        t = s + d
        ns = len(s)
        if d >= 2:
            R = s[:, None] + np.arange(1, d)[None, :]
            Sb, Tb = s[:, None], t[:, None]
        for j in reversed(range(D)):
            if j == D - 1:
                if d == 1:
                    hit = (tokens[:, None, :] == tab.anchor[None, :, None]) | (tokens[:, None, :] == WILDCARD)
                    core[:, :, j, s, t] = c * hit
            else:
                core[:, :, j, s, t] = full[:, :, j + 1, s, t]
            if d >= 2:
                cj, blj, brj = core[:, :, j], bl[:, :, j], br[:, :, j]
                bl_sr = blj[..., Sb, R]
                left[:, :, j, s, t] = np.einsum("bank,bank->ban", bl_sr, cj[..., R, Tb])
                right[:, :, j, s, t] = np.einsum("bank,bank->ban", cj[..., Sb, R], brj[..., R, Tb])
                if m is not None:
                    right[:, :, j, s, t] *= m[:, None, s, t]
                both[:, :, j, s, t] = np.einsum("bank,bank->ban", bl_sr, right[:, :, j][..., R, Tb])
                if m is not None:
                    left[:, :, j, s, t] *= m[:, None, s, t]
                    both[:, :, j, s, t] *= m[:, None, s, t]
                updates += 3 * nA * ns * (d - 1)
            full[:, :, j, s, t] = (
                nl[..., j, :] * nr[..., j, :] * core[:, :, j, s, t]
                + nr[..., j, :] * left[:, :, j, s, t]
                + nl[..., j, :] * right[:, :, j, s, t]
                + w * both[:, :, j, s, t]
            )
            if m is not None:
                full[:, :, j, s, t] *= m[:, None, s, t]
            updates += nA * ns
        roots = full[:, :, 0, s, t]
        bl[:, :, :, s, t] = np.einsum("ajl,bln->bajn", tab.pl, roots[:, tab.left_idx])
        br[:, :, :, s, t] = np.einsum("ajr,brn->bajn", tab.pr, roots[:, tab.right_idx])
        updates += nA * D * ns * (len(tab.left_idx) + len(tab.right_idx))
    # initial tree: empty core, so only the full span (0, T) matters
    bl0_row = np.einsum("l,bls->bs", tab.pl0, full[:, tab.left_idx, 0, 0, :])   # bl0(0, r)
    br0_col = np.einsum("r,brs->bs", tab.pr0, full[:, :, 0, :, T][:, tab.right_idx])  # br0(r, T)
    init_left = bl0_row[:, T]
    init_right = br0_col[:, 0]
    init_both = np.einsum("bk,bk->b", bl0_row[:, 1:T], br0_col[:, 1:T])
    updates += T
    prob = tab.p_start * (tab.nr0 * init_left + tab.nl0 * init_right + w * init_both)
    return InsideBatch(tab, tokens, mask, c, core, left, right, both, full, bl, br,
                       init_left, init_right, init_both, prob, updates)


@dataclass
class OutsideBatch:
    """Outside tables (unnormalized, scaled by ``scale ** (T - width)``)."""

    inside: InsideBatch
    none: np.ndarray   # f(s,t,eta,0)
    left: np.ndarray   # f(s,t,eta,L)
    right: np.ndarray  # f(s,t,eta,R)
    both: np.ndarray   # f(s,t,eta,LR)
    bar: np.ndarray    # combined f-bar
    root: np.ndarray   # (B, nA, S, S) outside of auxiliary-tree roots
    host_left: np.ndarray   # (B, nA, D, S, S) adjunction context for left trees
    host_right: np.ndarray
    counts: dict


def outside_batch(ins: InsideBatch, want_counts=True) -> OutsideBatch:
    tab = ins.tab
    B, T = ins.tokens.shape
    S = T + 1
    nA, D, w = tab.nA, tab.D, tab.w
    m = None if ins.mask is None else ins.mask.astype(float)
    shape = (B, nA, D, S, S)
    f0, fl, fr, flr, fbar, hl, hr = (np.zeros(shape) for _ in range(7))
    root = np.zeros((B, nA, S, S))
    nl = tab.nl_[None, :, :]
    nr = tab.nr_[None, :, :]
    lidx, ridx = tab.left_idx, tab.right_idx
    full_roots = ins.full[:, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_p = np.where(ins.prob > 0, 1.0 / ins.prob, 0.0)

    # initial tree: f(0,T,root) = P_I; its core is empty
    top = tab.p_start * np.ones(B)
    bl0_row = np.einsum("l,bls->bs", tab.pl0, full_roots[:, lidx, 0, :])
    br0_col = np.einsum("r,brs->bs", tab.pr0, full_roots[:, :, :, T][:, ridx])
    hl0 = np.zeros((B, S))           # context of a left tree spanning (0, r)
    hl0[:, T] = tab.nr0 * top
    hl0[:, 1:T] = w * br0_col[:, 1:T] * top[:, None]
    hr0 = np.zeros((B, S))           # context of a right tree spanning (r, T)
    hr0[:, 0] = tab.nl0 * top
    hr0[:, 1:T] = w * bl0_row[:, 1:T] * top[:, None]
    if m is not None:
        hr0[:, 1:T] *= m[:, 1:T, T]
    root[:, lidx, 0, :] += tab.pl0[None, :, None] * hl0[:, None, :]
    root_col = root[:, :, :, T]  # view
    root_col[:, ridx] += tab.pr0[None, :, None] * hr0[:, None, :]

    counts = None
    if want_counts:
        counts = {
            "left": np.zeros((nA, D, len(lidx))), "right": np.zeros((nA, D, len(ridx))),
            "left_none": np.zeros((nA, D)), "right_none": np.zeros((nA, D)),
            "occupancy": np.zeros((nA, D)),
        }
        counts["init_left"] = tab.pl0 * np.einsum("b,bls,bs->l", inv_p, full_roots[:, lidx, 0, :], hl0)
        counts["init_right"] = tab.pr0 * np.einsum("b,brs,bs->r", inv_p, full_roots[:, :, :, T][:, ridx], hr0)
        counts["init_left_none"] = tab.nl0 * float(np.sum(inv_p * top * ins.init_right))
        counts["init_right_none"] = tab.nr0 * float(np.sum(inv_p * top * ins.init_left))

    for d in range(T, 0, -1):
        s = np.arange(T - d + 1)
        t = s + d
        if d >= 2:
            R = s[:, None] + np.arange(1, d)[None, :]
            Sb, Tb = s[:, None], t[:, None]
        ctx = np.zeros((B, nA, len(s)))
        ctx[:, lidx] = np.einsum("ajl,bajn->bln", tab.pl, hl[..., s, t])
        ctx[:, ridx] = np.einsum("ajr,bajn->brn", tab.pr, hr[..., s, t])
        root[:, :, s, t] += ctx
        if m is not None:
            root[:, :, s, t] *= m[:, None, s, t]
        if want_counts:
            inv = inv_p[:, None]
            counts["left"] += tab.pl * np.einsum("bln,bajn,b->ajl", full_roots[:, lidx][..., s, t], hl[..., s, t], inv_p)
            counts["right"] += tab.pr * np.einsum("brn,bajn,b->ajr", full_roots[:, ridx][..., s, t], hr[..., s, t], inv_p)
        for j in range(D):
            if j == 0:
                f0[:, :, 0, s, t] = root[:, :, s, t]
            else:
                f0[:, :, j, s, t] = fbar[:, :, j - 1, s, t]
            if m is not None:
                mm = m[:, None, s, t]
                f0[:, :, j, s, t] *= mm
                fl[:, :, j, s, t] *= mm
                fr[:, :, j, s, t] *= mm
                flr[:, :, j, s, t] *= mm
            nlj, nrj = nl[:, :, j, None], nr[:, :, j, None]
            fo = f0[:, :, j, s, t]
            fbar[:, :, j, s, t] = (nlj * nrj * fo + nrj * fl[:, :, j, s, t]
                                   + nlj * fr[:, :, j, s, t] + w * flr[:, :, j, s, t])
            if want_counts:
                c0 = ins.core[:, :, j, s, t]
                inv = inv_p[:, None, None]
                counts["left_none"][:, j] += np.sum(inv * fo * nlj * (nrj * c0 + ins.right[:, :, j, s, t]), axis=(0, 2))
                counts["right_none"][:, j] += np.sum(inv * fo * nrj * (nlj * c0 + ins.left[:, :, j, s, t]), axis=(0, 2))
                counts["occupancy"][:, j] += np.sum(inv * fo * ins.full[:, :, j, s, t], axis=(0, 2))
            if d >= 2:
                fo_k = fo[..., None]
                fl_k = fl[:, :, j, s, t][..., None]
                core_j, right_j = ins.core[:, :, j], ins.right[:, :, j]
                bl_sr = ins.bl[:, :, j][..., Sb, R]
                br_rt = ins.br[:, :, j][..., R, Tb]
                fl[:, :, j][..., R, Tb] += bl_sr * fo_k
                fr[:, :, j][..., Sb, R] += br_rt * fo_k
                flr[:, :, j][..., Sb, R] += br_rt * fl_k
                hl[:, :, j][..., Sb, R] += fo_k * (nrj[..., None] * core_j[..., R, Tb] + w * right_j[..., R, Tb])
                hr[:, :, j][..., R, Tb] += core_j[..., Sb, R] * (nlj[..., None] * fo_k + w * fl_k)
    return OutsideBatch(ins, f0, fl, fr, flr, fbar, root, hl, hr, counts)


# -- single-sentence interface ---------------------------------------------


def _mask_for(sentence: Sentence, constraints: bool):
    if not constraints or not sentence.gold_brackets:
        return None
    return compatibility_matrix(sentence)[None]


class InsideChart:
    """Inside probabilities of one sentence, with node-level accessors."""

    def __init__(self, grammar, params, sentence: Sentence, constraints=False, scale=None):
        _check_tokens(grammar, sentence.tokens)
        self.grammar = grammar
        self.sentence = sentence
        self.constraints = constraints
        self.batch = inside_batch(tables(grammar, params), np.array([sentence.tokens]),
                                  _mask_for(sentence, constraints), scale)
        self.T = len(sentence)
        self.scale = self.batch.scale
        self.cell_updates = self.batch.cell_updates

    @property
    def sentence_prob(self) -> float:
        return float(self.batch.prob[0] * self.scale ** (-self.T))

    @property
    def log2_prob(self) -> float:
        return float(self.batch.log2_prob()[0])

    def _unscale(self, value, s, t):
        return float(value) * self.scale ** (-(t - s))

    def _init_tables(self):
        if not hasattr(self, "_init"):
            b, tab = self.batch, self.batch.tab
            roots = b.full[0, :, 0]
            bl0 = np.einsum("l,lst->st", tab.pl0, roots[tab.left_idx])
            br0 = np.einsum("r,rst->st", tab.pr0, roots[tab.right_idx])
            S = self.T + 1
            core = np.eye(S)
            if b.mask is not None:
                br0 = br0 * b.mask[0]
            both = np.triu(bl0, 1) @ br0
            if b.mask is not None:
                bl0 = bl0 * b.mask[0]
                both = both * b.mask[0]
            full = tab.nl0 * tab.nr0 * core + tab.nr0 * bl0 + tab.nl0 * br0 + tab.w * both
            self._init = {"none": core, "L": bl0, "R": br0, "LR": both, "full": full}
        return self._init

    def raw(self, s, t, node, state) -> float:
        """Unscaled e(s, t, node, state) for a spine node."""
        tree, pos = node
        if tree == 0:
            if pos != 1:
                raise UsageError("raw states exist only on spine nodes")
            return self._unscale(self._init_tables()[state][s, t], s, t)
        level = pos - 1
        if not 0 <= level < self.batch.tab.D:
            raise UsageError("raw states exist only on spine nodes")
        arr = {"none": self.batch.core, "L": self.batch.left, "R": self.batch.right, "LR": self.batch.both}[state]
        return self._unscale(arr[0, tree - 1, level, s, t], s, t)

    def combined(self, s, t, node) -> float:
        """Unscaled e-bar(s, t, node) for any node."""
        tree, pos = node
        g = self.grammar
        n = g.node(node)
        if n.is_foot or n.is_empty:
            return 1.0 if s == t else 0.0
        if n.is_leaf:
            return 1.0 if t == s + 1 and self.sentence.tokens[s] == g.trees[tree].anchor else 0.0
        if tree == 0:
            return self._unscale(self._init_tables()["full"][s, t], s, t)
        level = 0 if pos == 0 else pos - 1
        return self._unscale(self.batch.full[0, tree - 1, level, s, t], s, t)


class OutsideChart:
    def __init__(self, inside: InsideChart):
        self.inside = inside
        self.batch = outside_batch(inside.batch, want_counts=True)
        self.T = inside.T
        self.scale = inside.scale

    def _unscale(self, value, s, t):
        return float(value) * self.scale ** (-(self.T - (t - s)))

    def raw(self, s, t, node, state) -> float:
        tree, pos = node
        if tree == 0:
            if (s, t) != (0, self.T):
                return 0.0
            return {"none": self.batch.inside.tab.p_start}.get(state, 0.0)
        arr = {"none": self.batch.none, "L": self.batch.left, "R": self.batch.right, "LR": self.batch.both}[state]
        return self._unscale(arr[0, tree - 1, pos - 1, s, t], s, t)

    def combined(self, s, t, node) -> float:
        """Unscaled f-bar(s, t, node).  For an anchor this is its parent's f-bar."""
        tree, pos = node
        g = self.inside.grammar
        tab = self.batch.inside.tab
        n = g.node(node)
        if tree == 0:
            if (s, t) != (0, self.T):
                return 0.0
            if pos == 0:
                return tab.p_start
            # spine node of the initial tree
            return tab.p_start * tab.nl0 * tab.nr0
        if pos == 0:
            return self._unscale(self.batch.root[0, tree - 1, s, t], s, t)
        if n.is_leaf and not n.is_foot:
            pos = g.trees[tree].depth
        return self._unscale(self.batch.bar[0, tree - 1, pos - 1, s, t], s, t)

    def root(self, s, t, tree) -> float:
        """f(s, t, root of tree, 0)."""
        if tree == 0:
            return self.batch.inside.tab.p_start if (s, t) == (0, self.T) else 0.0
        return self._unscale(self.batch.root[0, tree - 1, s, t], s, t)


def compute_inside(grammar: Grammar, params: ParamSet, sentence: Sentence, constraints=False, scale=None) -> InsideChart:
    return InsideChart(grammar, params, sentence, constraints, scale)


def compute_outside(grammar: Grammar, params: ParamSet, sentence: Sentence, inside: InsideChart,
                    constraints=False) -> OutsideChart:
    if inside.sentence != sentence or inside.grammar is not grammar or inside.constraints != constraints:
        raise UsageError("inside chart was computed for a different sentence, grammar or constraint setting")
    return OutsideChart(inside)


def sentence_log_prob(grammar: Grammar, params: ParamSet, sentence: Sentence, constraints=False) -> float:
    """log2 P(sentence); ``-inf`` when it has no derivation."""
    return compute_inside(grammar, params, sentence, constraints).log2_prob


def group_by_length(sentences):
    groups: dict[int, list[int]] = {}
    for i, sent in enumerate(sentences):
        groups.setdefault(len(sent), []).append(i)
    return groups


def batches(grammar: Grammar, sentences, constraints=False):
    """Yield ``(indices, tokens, mask)`` batches of equal-length sentences."""
    per_cell = max(1, (grammar.n_trees - 1) * grammar.depth)
    for T, idx in sorted(group_by_length(sentences).items()):
        size = max(1, _BATCH_CELLS // (per_cell * (T + 1) ** 2))
        for k in range(0, len(idx), size):
            chunk = idx[k : k + size]
            tokens = np.array([sentences[i].tokens for i in chunk])
            mask = None
            if constraints and any(sentences[i].gold_brackets for i in chunk):
                mask = np.stack([compatibility_matrix(sentences[i]) for i in chunk])
            yield chunk, tokens, mask


def corpus_log2_probs(grammar: Grammar, params: ParamSet, sentences, constraints=False) -> np.ndarray:
    """Per-sentence log2 probabilities, in corpus order."""
    tab = tables(grammar, params)
    out = np.empty(len(sentences))
    for chunk, tokens, mask in batches(grammar, sentences, constraints):
        _check_tokens(grammar, tokens)
        out[chunk] = inside_batch(tab, tokens, mask).log2_prob()
    return out


def string_mass(grammar: Grammar, params: ParamSet, max_length: int, lr_weight: float | None = None) -> np.ndarray:
    """Total probability of all strings of each length ``1..max_length``.

    ``lr_weight`` overrides the grammar's weight on simultaneous left+right
    adjunction, so the mass lost to the down-weighting can be measured
    directly: with weight 1 a consistent grammar sums to 1 over all lengths.
    """
    tab = tables(grammar, params)
    if lr_weight is not None:
        tab.w = float(lr_weight)
    out = np.empty(max_length)
    for T in range(1, max_length + 1):
        ins = inside_batch(tab, np.full((1, T), WILDCARD), scale=1.0)
        out[T - 1] = ins.prob[0]
    return out
