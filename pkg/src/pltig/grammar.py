"""PLTIG elementary trees, grammar templates and parameter sets.

Every template tree is a chain: a root, ``k`` intermediary (spine) nodes
and a lexical anchor.  Auxiliary trees also carry a foot node as the
root's second child (left auxiliary trees: ``root -> (spine, foot)``;
right auxiliary trees: ``root -> (foot, spine)``).  The single initial
tree is ``root -> spine -> empty``.  Adjunction sites live on spine nodes
only; roots never take adjunctions.

Node positions inside a tree are ``0`` for the root, ``1..k`` for the
spine (``1`` nearest the root), then the anchor and, for auxiliary trees,
the foot.  Spine position ``p`` is *level* ``p - 1`` in parameter arrays.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .errors import ConfigError

NONTERMINAL = "X"
FOOT = "X*"
EMPTY = "<eps>"

MODEL_FORMAT = "pltig-model"
MODEL_VERSION = 1

#: weight of the simultaneous left+right adjunction state in the combined
#: node probability, as printed in the inside/outside recursions
DEFAULT_LR_WEIGHT = 0.5


class TreeKind(enum.Enum):
    INITIAL = "initial"
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class Node:
    tree: int
    position: int
    label: str
    children: tuple[int, ...] = ()
    has_left_site: bool = False
    has_right_site: bool = False

    @property
    def id(self) -> tuple[int, int]:
        return (self.tree, self.position)

    @property
    def is_foot(self) -> bool:
        return self.label == FOOT

    @property
    def is_empty(self) -> bool:
        return self.label == EMPTY

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class ElementaryTree:
    id: int
    kind: TreeKind
    anchor: int | None
    nodes: tuple[Node, ...]

    @property
    def depth(self) -> int:
        """Number of spine nodes."""
        return sum(1 for n in self.nodes if n.children and n.position > 0)

    @property
    def root(self) -> Node:
        return self.nodes[0]

    @property
    def spine(self) -> tuple[Node, ...]:
        return self.nodes[1 : 1 + self.depth]

    @property
    def anchor_node(self) -> Node:
        return self.nodes[1 + self.depth]

    @property
    def foot(self) -> Node | None:
        return self.nodes[2 + self.depth] if self.kind is not TreeKind.INITIAL else None

    @property
    def sites(self) -> int:
        return sum(n.has_left_site + n.has_right_site for n in self.nodes)


@dataclass(frozen=True)
class TemplateConfig:
    shape: str = "lnrm"
    left_sites: int = 1
    right_sites: int = 1

    def __post_init__(self):
        if self.shape not in ("bigram", "lnrm"):
            raise ConfigError(f"unknown template shape {self.shape!r}")
        if self.shape == "bigram":
            if (self.left_sites, self.right_sites) != (0, 1):
                raise ConfigError("bigram template has exactly one right site per tree")
        elif self.left_sites < 0 or self.right_sites < 0:
            raise ConfigError("site counts must be non-negative")
        elif self.left_sites + self.right_sites == 0:
            raise ConfigError("template needs at least one adjunction site (n+m >= 1)")

    @classmethod
    def bigram(cls):
        return cls("bigram", 0, 1)

    @classmethod
    def lnrm(cls, n: int, m: int):
        return cls("lnrm", n, m)

    @classmethod
    def parse(cls, name: str):
        """``"bigram"`` or ``"L<n>R<m>"`` (case-insensitive)."""
        if name.lower() == "bigram":
            return cls.bigram()
        match = re.fullmatch(r"[lL](\d+)[rR](\d+)", name.strip())
        if not match:
            raise ConfigError(f"cannot parse template name {name!r}")
        return cls.lnrm(int(match.group(1)), int(match.group(2)))

    @property
    def name(self) -> str:
        return "bigram" if self.shape == "bigram" else f"L{self.left_sites}R{self.right_sites}"

    @property
    def K(self) -> int:
        return self.left_sites + self.right_sites

    @property
    def depth(self) -> int:
        return max(self.left_sites, self.right_sites)


class Grammar:
    """Immutable tree inventory built from a template."""

    def __init__(self, vocab: Vocabulary, config: TemplateConfig, trees, lr_weight=DEFAULT_LR_WEIGHT):
        self.vocab = vocab
        self.config = config
        self.trees = tuple(trees)
        self.lr_weight = float(lr_weight)
        self.initial_trees = tuple(t.id for t in self.trees if t.kind is TreeKind.INITIAL)
        self.left_trees = tuple(t.id for t in self.trees if t.kind is TreeKind.LEFT)
        self.right_trees = tuple(t.id for t in self.trees if t.kind is TreeKind.RIGHT)
        self.depth = max(t.depth for t in self.trees)
        n = len(self.trees)
        self.has_left = np.zeros((n, self.depth), dtype=bool)
        self.has_right = np.zeros((n, self.depth), dtype=bool)
        for tree in self.trees:
            for level, node in enumerate(tree.spine):
                self.has_left[tree.id, level] = node.has_left_site
                self.has_right[tree.id, level] = node.has_right_site
        self._left_col = {tid: i + 1 for i, tid in enumerate(self.left_trees)}
        self._right_col = {tid: i + 1 for i, tid in enumerate(self.right_trees)}

    def __repr__(self):
        return f"Grammar({self.config.name}, V={len(self.vocab)}, trees={len(self.trees)})"

    @property
    def V(self) -> int:
        return len(self.vocab)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def node(self, node_id) -> Node:
        tree, pos = node_id
        return self.trees[tree].nodes[pos]

    def nodes(self):
        for tree in self.trees:
            yield from tree.nodes

    def site_nodes(self):
        """Node ids carrying at least one site, in tree/position order."""
        return [n.id for n in self.nodes() if n.has_left_site or n.has_right_site]

    def left_column(self, tree_id: int) -> int:
        return self._left_col[tree_id]

    def right_column(self, tree_id: int) -> int:
        return self._right_col[tree_id]

    def tree_name(self, tree_id: int) -> str:
        tree = self.trees[tree_id]
        if tree.kind is TreeKind.INITIAL:
            return "init"
        prefix = "L" if tree.kind is TreeKind.LEFT else "R"
        return f"{prefix}:{self.vocab.symbols[tree.anchor]}"

    @property
    def initial(self) -> int:
        return self.initial_trees[0]


def _spine_tree(tree_id, kind, anchor_label, anchor, levels):
    """Build a chain tree; ``levels`` lists ``(has_left, has_right)`` per spine node."""
    k = len(levels)
    nodes = []
    anchor_pos = k + 1
    foot_pos = k + 2
    if kind is TreeKind.INITIAL:
        root_children = (1,)
    elif kind is TreeKind.LEFT:
        root_children = (1, foot_pos)
    else:
        root_children = (foot_pos, 1)
    nodes.append(Node(tree_id, 0, NONTERMINAL, root_children))
    for p, (has_l, has_r) in enumerate(levels, 1):
        nodes.append(Node(tree_id, p, NONTERMINAL, (p + 1,), has_l, has_r))
    nodes.append(Node(tree_id, anchor_pos, anchor_label))
    if kind is not TreeKind.INITIAL:
        nodes.append(Node(tree_id, foot_pos, FOOT))
    return ElementaryTree(tree_id, kind, anchor, tuple(nodes))


def build_template(vocab: Vocabulary, config: TemplateConfig, lr_weight=DEFAULT_LR_WEIGHT) -> Grammar:
    """Build the bigram-simulating or an LnRm grammar over ``vocab``.

    LnRm auxiliary trees hold ``max(n, m)`` spine nodes; node ``j`` (1 =
    nearest the root) has a left site iff ``j <= n`` and a right site iff
    ``j <= m``.
    """
    if len(vocab) == 0:
        raise ConfigError("empty vocabulary")
    trees = []
    if config.shape == "bigram":
        trees.append(_spine_tree(0, TreeKind.INITIAL, EMPTY, None, [(False, True)]))
        for v, sym in enumerate(vocab.symbols):
            trees.append(_spine_tree(len(trees), TreeKind.RIGHT, sym, v, [(False, True)]))
    else:
        n, m = config.left_sites, config.right_sites
        levels = [(j <= n, j <= m) for j in range(1, config.depth + 1)]
        trees.append(_spine_tree(0, TreeKind.INITIAL, EMPTY, None, [(True, True)]))
        for v, sym in enumerate(vocab.symbols):
            trees.append(_spine_tree(len(trees), TreeKind.LEFT, sym, v, levels))
        for v, sym in enumerate(vocab.symbols):
            trees.append(_spine_tree(len(trees), TreeKind.RIGHT, sym, v, levels))
    return Grammar(vocab, config, trees, lr_weight)


# -- parameters ------------------------------------------------------------


@dataclass
class ParamSet:
    """Trainable probabilities.

    ``left[tree, level]`` is a distribution over ``[no adjunction] +
    left_trees``; ``right`` likewise over right auxiliary trees.  Rows of
    spine nodes without the corresponding site are ``[1, 0, ..., 0]``.
    """

    start: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def copy(self) -> "ParamSet":
        return ParamSet(self.start.copy(), self.left.copy(), self.right.copy())

    def __eq__(self, other):
        return (
            isinstance(other, ParamSet)
            and np.array_equal(self.start, other.start)
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
        )

    # node-level accessors; ``node`` is a ``(tree, position)`` id of a spine node
    def no_left(self, node) -> float:
        tree, pos = node
        return float(self.left[tree, pos - 1, 0]) if 1 <= pos <= self.left.shape[1] else 1.0

    def no_right(self, node) -> float:
        tree, pos = node
        return float(self.right[tree, pos - 1, 0]) if 1 <= pos <= self.right.shape[1] else 1.0

    def p_left(self, grammar: Grammar, node, tree_id: int) -> float:
        tree, pos = node
        if not 1 <= pos <= self.left.shape[1]:
            return 0.0
        return float(self.left[tree, pos - 1, grammar.left_column(tree_id)])

    def p_right(self, grammar: Grammar, node, tree_id: int) -> float:
        tree, pos = node
        if not 1 <= pos <= self.right.shape[1]:
            return 0.0
        return float(self.right[tree, pos - 1, grammar.right_column(tree_id)])


def empty_params(grammar: Grammar) -> ParamSet:
    n, D = grammar.n_trees, grammar.depth
    start = np.zeros(n)
    start[list(grammar.initial_trees)] = 1.0 / len(grammar.initial_trees)
    left = np.zeros((n, D, len(grammar.left_trees) + 1))
    right = np.zeros((n, D, len(grammar.right_trees) + 1))
    left[..., 0] = 1.0
    right[..., 0] = 1.0
    return ParamSet(start, left, right)


def init_params(grammar: Grammar, seed: int = 0, low: float = 0.1, high: float = 1.0) -> ParamSet:
    """Admissible random initialization: uniform weights in ``[low, high]``
    normalized per site, so every distribution is strictly positive."""
    rng = np.random.default_rng(seed)
    params = empty_params(grammar)
    for arr, mask in ((params.left, grammar.has_left), (params.right, grammar.has_right)):
        weights = rng.uniform(low, high, size=arr.shape)
        weights /= weights.sum(axis=-1, keepdims=True)
        arr[mask] = weights[mask]
    return params


def uniform_params(grammar: Grammar) -> ParamSet:
    params = empty_params(grammar)
    for arr, mask in ((params.left, grammar.has_left), (params.right, grammar.has_right)):
        arr[mask] = 1.0 / arr.shape[-1]
    return params


def param_count(grammar: Grammar) -> int:
    """Number of probabilities in the grammar.

    LnRm: ``2(V+1) + 2 V K (V+1)``.  The bigram template has no published
    count; it is counted as ``(V+1)^2`` (one right distribution of size
    ``V+1`` on the initial tree and on each of the ``V`` trees).
    """
    V = grammar.V
    if grammar.config.shape == "bigram":
        return (V + 1) * (V + 1)
    K = grammar.config.K
    return 2 * (V + 1) + 2 * V * K * (V + 1)


def validate(grammar: Grammar, params: ParamSet, tol: float = 1e-10) -> list[str]:
    """List every violated parameter constraint (empty when consistent)."""
    problems = []
    n, D = grammar.n_trees, grammar.depth
    expected = {"start": (n,), "left": (n, D, len(grammar.left_trees) + 1),
                "right": (n, D, len(grammar.right_trees) + 1)}
    for name, shape in expected.items():
        arr = getattr(params, name)
        if arr.shape != shape:
            return [f"{name}: shape {arr.shape} != {shape}"]
        if np.any(arr < -tol) or not np.all(np.isfinite(arr)):
            problems.append(f"{name}: negative or non-finite entries")
    for tree in grammar.trees:
        p = params.start[tree.id]
        if tree.kind is not TreeKind.INITIAL and p != 0.0:
            problems.append(f"start[{grammar.tree_name(tree.id)}] = {p!r} on an auxiliary tree")
    total = sum(params.start[t] for t in grammar.initial_trees)
    if abs(total - 1.0) > tol:
        problems.append(f"start probabilities sum to {total!r}")
    for direction, arr, mask in (("left", params.left, grammar.has_left),
                                 ("right", params.right, grammar.has_right)):
        for tree in grammar.trees:
            for level in range(D):
                row = arr[tree.id, level]
                where = f"{direction} site of node ({tree.id}, {level + 1}) [{grammar.tree_name(tree.id)}]"
                if mask[tree.id, level]:
                    dev = row.sum() - 1.0
                    if abs(dev) > tol:
                        problems.append(f"{where}: sums to 1{dev:+.3g}")
                elif row[0] != 1.0 or np.any(row[1:] != 0.0):
                    problems.append(f"{where}: node has no {direction} site but row is not [1, 0, ...]")
    return problems


# -- model files -----------------------------------------------------------


def _tree_record(grammar: Grammar, tree: ElementaryTree):
    return {
        "id": tree.id,
        "kind": tree.kind.value,
        "anchor": None if tree.anchor is None else grammar.vocab.symbols[tree.anchor],
        "nodes": [
            {"position": n.position, "label": n.label, "children": list(n.children),
             "left_site": n.has_left_site, "right_site": n.has_right_site}
            for n in tree.nodes
        ],
    }


def model_to_dict(grammar: Grammar, params: ParamSet, extra=None) -> dict:
    sites = []
    for tree in grammar.trees:
        for level, node in enumerate(tree.spine):
            rec = {"node": [tree.id, node.position]}
            if node.has_left_site:
                row = params.left[tree.id, level]
                rec["left"] = {"none": float(row[0]),
                               "trees": {str(t): float(p) for t, p in zip(grammar.left_trees, row[1:])}}
            if node.has_right_site:
                row = params.right[tree.id, level]
                rec["right"] = {"none": float(row[0]),
                                "trees": {str(t): float(p) for t, p in zip(grammar.right_trees, row[1:])}}
            if len(rec) > 1:
                sites.append(rec)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "vocabulary": list(grammar.vocab.symbols),
        "template": {"shape": grammar.config.shape, "left_sites": grammar.config.left_sites,
                     "right_sites": grammar.config.right_sites},
        "lr_weight": grammar.lr_weight,
        "trees": [_tree_record(grammar, t) for t in grammar.trees],
        "start": {str(t): float(params.start[t]) for t in range(grammar.n_trees) if params.start[t] != 0.0},
        "sites": sites,
    }
    if extra:
        doc["metadata"] = extra
    return doc


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"not a PLTIG model file (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported model version {doc.get('version')!r}")
    vocab = Vocabulary(doc["vocabulary"])
    tpl = doc["template"]
    config = TemplateConfig(tpl["shape"], tpl["left_sites"], tpl["right_sites"])
    grammar = build_template(vocab, config, doc.get("lr_weight", DEFAULT_LR_WEIGHT))
    if [_tree_record(grammar, t) for t in grammar.trees] != doc["trees"]:
        raise ConfigError("tree inventory in model file does not match its template")
    params = empty_params(grammar)
    params.start[:] = 0.0
    for t, p in doc["start"].items():
        params.start[int(t)] = p
    for rec in doc["sites"]:
        tree, pos = rec["node"]
        for direction, arr, cols in (("left", params.left, grammar.left_column),
                                     ("right", params.right, grammar.right_column)):
            if direction in rec:
                arr[tree, pos - 1, 0] = rec[direction]["none"]
                for t, p in rec[direction]["trees"].items():
                    arr[tree, pos - 1, cols(int(t))] = p
    return grammar, params


def save_model(path, grammar: Grammar, params: ParamSet, extra=None):
    Path(path).write_text(json.dumps(model_to_dict(grammar, params, extra), indent=1) + "\n", encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
