"""Direct, memoized log-space evaluation of the PLTIG inside/outside recursions.

This path walks the node graph of an arbitrary tree set and evaluates every
recursion term by term, including the quadruple sum for simultaneous
left+right adjunction.  It is exponentially cheaper than enumeration but
far slower than :mod:`pltig.chart`; it exists to cross-check the chart on
small inputs and never underflows.

Bracket constraints are not supported here.
"""

from __future__ import annotations

import math

from .grammar import Grammar, ParamSet, TreeKind

NEG_INF = float("-inf")
_PENDING = object()


def _log(x: float) -> float:
    return math.log(x) if x > 0 else NEG_INF


def logsumexp(values) -> float:
    values = [v for v in values if v != NEG_INF]
    if not values:
        return NEG_INF
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


class ReferenceChart:
    def __init__(self, grammar: Grammar, params: ParamSet, tokens, lr_weight: float | None = None):
        self.g = grammar
        self.p = params
        self.tokens = tuple(tokens)
        self.T = len(self.tokens)
        self.log_w = _log(grammar.lr_weight if lr_weight is None else lr_weight)
        self._memo: dict = {}
        self.parent: dict = {}
        for node in grammar.nodes():
            for i, child in enumerate(node.children):
                self.parent[(node.tree, child)] = (node.id, i, len(node.children))
        self.left_roots = [(t, 0) for t in grammar.left_trees]
        self.right_roots = [(t, 0) for t in grammar.right_trees]
        self.left_hosts = [n.id for n in grammar.nodes() if n.has_left_site]
        self.right_hosts = [n.id for n in grammar.nodes() if n.has_right_site]

    # parameter logs ------------------------------------------------------
    def _lnl(self, eta):
        return _log(self.p.no_left(eta)) if self.g.node(eta).has_left_site else 0.0

    def _lnr(self, eta):
        return _log(self.p.no_right(eta)) if self.g.node(eta).has_right_site else 0.0

    def _lpl(self, eta, rho_root):
        return _log(self.p.p_left(self.g, eta, rho_root[0]))

    def _lpr(self, eta, rho_root):
        return _log(self.p.p_right(self.g, eta, rho_root[0]))

    def _cached(self, key, fn):
        val = self._memo.get(key)
        if val is _PENDING:
            raise RuntimeError(f"cyclic dependency at {key}")
        if val is None:
            self._memo[key] = _PENDING
            val = fn()
            self._memo[key] = val
        return val

    # inside ----------------------------------------------------------------
    def e_bar(self, s, t, eta) -> float:
        """log of the combined inside probability."""
        return self._cached(("ebar", s, t, eta), lambda: self._e_bar(s, t, eta))

    def _e_bar(self, s, t, eta):
        node = self.g.node(eta)
        if node.is_foot or node.is_empty:
            return 0.0 if s == t else NEG_INF
        if node.is_leaf:
            anchor = self.g.trees[node.tree].anchor
            return 0.0 if t == s + 1 and self.tokens[s] == anchor else NEG_INF
        lnl, lnr = self._lnl(eta), self._lnr(eta)
        terms = [lnl + lnr + self.e(s, t, eta, "none")]
        if node.has_left_site:
            terms.append(lnr + self.e(s, t, eta, "L"))
        if node.has_right_site:
            terms.append(lnl + self.e(s, t, eta, "R"))
        if node.has_left_site and node.has_right_site:
            terms.append(self.log_w + self.e(s, t, eta, "LR"))
        return logsumexp(terms)

    def e(self, s, t, eta, state) -> float:
        return self._cached(("e", s, t, eta, state), lambda: self._e(s, t, eta, state))

    def _e(self, s, t, eta, state):
        node = self.g.node(eta)
        terms = []
        if state == "none":
            kids = [(node.tree, c) for c in node.children]
            if len(kids) == 1:
                return self.e_bar(s, t, kids[0])
            for r in range(s, t + 1):
                # evaluate the zero-width side first so empty factors short-circuit
                if r == t:
                    right = self.e_bar(r, t, kids[1])
                    if right != NEG_INF:
                        terms.append(self.e_bar(s, r, kids[0]) + right)
                else:
                    left = self.e_bar(s, r, kids[0])
                    if left != NEG_INF:
                        terms.append(left + self.e_bar(r, t, kids[1]))
        elif state == "L":
            for r in range(s + 1, t + 1):
                host = self.e(r, t, eta, "none")
                if host == NEG_INF:
                    continue
                for rho in self.left_roots:
                    terms.append(self.e_bar(s, r, rho) + host + self._lpl(eta, rho))
        elif state == "R":
            for r in range(s, t):
                host = self.e(s, r, eta, "none")
                if host == NEG_INF:
                    continue
                for rho in self.right_roots:
                    terms.append(host + self.e_bar(r, t, rho) + self._lpr(eta, rho))
        elif state == "LR":
            for r1 in range(s + 1, t):
                for r2 in range(r1, t):
                    host = self.e(r1, r2, eta, "none")
                    if host == NEG_INF:
                        continue
                    for rl in self.left_roots:
                        a = self.e_bar(s, r1, rl) + self._lpl(eta, rl)
                        if a == NEG_INF:
                            continue
                        for rr in self.right_roots:
                            terms.append(a + host + self.e_bar(r2, t, rr) + self._lpr(eta, rr))
        else:
            raise ValueError(state)
        return logsumexp(terms)

    def log_prob(self) -> float:
        """Natural log of the sentence probability."""
        terms = []
        for tid in self.g.initial_trees:
            terms.append(_log(self.p.start[tid]) + self.e_bar(0, self.T, (tid, 0)))
        return logsumexp(terms)

    # outside ---------------------------------------------------------------
    def f(self, s, t, eta, state) -> float:
        return self._cached(("f", s, t, eta, state), lambda: self._f(s, t, eta, state))

    def f_bar(self, s, t, eta) -> float:
        return self._cached(("fbar", s, t, eta), lambda: self._f_bar(s, t, eta))

    def _f_bar(self, s, t, eta):
        node = self.g.node(eta)
        lnl, lnr = self._lnl(eta), self._lnr(eta)
        terms = [lnl + lnr + self.f(s, t, eta, "none")]
        if node.has_left_site:
            terms.append(lnr + self.f(s, t, eta, "L"))
        if node.has_right_site:
            terms.append(lnl + self.f(s, t, eta, "R"))
        if node.has_left_site and node.has_right_site:
            terms.append(self.log_w + self.f(s, t, eta, "LR"))
        return logsumexp(terms)

    def _f(self, s, t, eta, state):
        T = self.T
        if state == "none":
            return self._f_none(s, t, eta)
        terms = []
        if state == "L":
            for r in range(0, s + 1):
                for rho in self.left_roots:
                    inner = self.e_bar(r, s, rho)
                    if inner != NEG_INF:
                        terms.append(inner + self.f(r, t, eta, "none") + self._lpl(eta, rho))
        elif state == "R":
            for r in range(t, T + 1):
                for rho in self.right_roots:
                    inner = self.e_bar(t, r, rho)
                    if inner != NEG_INF:
                        terms.append(inner + self.f(s, r, eta, "none") + self._lpr(eta, rho))
        elif state == "LR":
            for r1 in range(0, s + 1):
                for r2 in range(t, T + 1):
                    for rl in self.left_roots:
                        a = self.e_bar(r1, s, rl)
                        if a == NEG_INF:
                            continue
                        for rr in self.right_roots:
                            b = self.e_bar(t, r2, rr)
                            if b == NEG_INF:
                                continue
                            terms.append(a + b + self.f(r1, r2, eta, "none")
                                         + self._lpr(eta, rr) + self._lpl(eta, rl))
        else:
            raise ValueError(state)
        return logsumexp(terms)

    def _f_none(self, s, t, eta):
        T = self.T
        tree = self.g.trees[eta[0]]
        if eta[1] == 0:
            if tree.kind is TreeKind.INITIAL:
                return _log(self.p.start[tree.id]) if (s, t) == (0, T) else NEG_INF
            terms = []
            if tree.kind is TreeKind.LEFT:
                # root of a left tree adjoined into eta0 whose remaining part spans (t, r)
                for eta0 in self.left_hosts:
                    lpl = self._lpl(eta0, eta)
                    if lpl == NEG_INF:
                        continue
                    for r in range(t, T + 1):
                        ctx = [self._lnr(eta0) + self.e(t, r, eta0, "none")]
                        if self.g.node(eta0).has_right_site:
                            ctx.append(self.log_w + self.e(t, r, eta0, "R"))
                        inner = logsumexp(ctx)
                        if inner != NEG_INF:
                            terms.append(lpl + self.f(s, r, eta0, "none") + inner)
            else:
                for eta0 in self.right_hosts:
                    lpr = self._lpr(eta0, eta)
                    if lpr == NEG_INF:
                        continue
                    for r in range(0, s + 1):
                        ctx = [self._lnl(eta0) + self.e(r, s, eta0, "none")]
                        if self.g.node(eta0).has_left_site:
                            ctx.append(self.log_w + self.e(r, s, eta0, "L"))
                        inner = logsumexp(ctx)
                        if inner != NEG_INF:
                            terms.append(lpr + self.f(r, t, eta0, "none") + inner)
            return logsumexp(terms)
        parent, index, n_children = self.parent[eta]
        if n_children == 1:
            return self.f_bar(s, t, parent)
        pnode = self.g.node(parent)
        terms = []
        if index == 0:
            sibling = (pnode.tree, pnode.children[1])
            for r in range(t, T + 1):
                inner = self.e_bar(t, r, sibling)
                if inner != NEG_INF:
                    terms.append(self.f_bar(s, r, parent) + inner)
        else:
            sibling = (pnode.tree, pnode.children[0])
            for r in range(0, s + 1):
                inner = self.e_bar(r, s, sibling)
                if inner != NEG_INF:
                    terms.append(self.f_bar(r, t, parent) + inner)
        return logsumexp(terms)
