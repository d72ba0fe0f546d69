import math
import random

import pytest

from pltig.corpus import Sentence, crosses
from pltig.errors import NoParseError
from pltig.grammar import empty_params, init_params
from pltig.viterbi import (ViterbiChart, derivation_log2_prob, derived_tree, extract_brackets, parse_brackets,
                           viterbi_parse)

from conftest import TEMPLATES, grammar_for, random_gold
from oracles import DerivationEnumerator, enumerate_weighted


def _key(d):
    return tuple((a.host, a.direction, a.tree, a.span) for a in d.adjunctions)


@pytest.mark.parametrize("name", TEMPLATES)
def test_viterbi_finds_the_best_enumerated_derivation(name):
    rng = random.Random(len(name))
    g = grammar_for(name)
    for _ in range(5):
        p = init_params(g, rng.randrange(1000))
        toks = tuple(rng.randrange(3) for _ in range(rng.randint(1, 4)))
        weighted = enumerate_weighted(g, p, toks)
        best = max(w for w, _ in weighted)
        d = viterbi_parse(g, p, Sentence(toks))
        assert d.score == pytest.approx(math.log2(best), abs=1e-9)
        assert derivation_log2_prob(g, p, d) == pytest.approx(d.score, abs=1e-9)
        assert _key(d) in {_key(x) for _, x in weighted}


@pytest.mark.parametrize("name", ["bigram", "L1R1", "L2R2"])
def test_derived_tree_spans_match_enumeration(name):
    g = grammar_for(name, "ab")
    toks = (0, 1, 1, 0)
    for d, spans in DerivationEnumerator(g).derivations(toks):
        tree = derived_tree(g, d)
        assert tree.leaves().count("a") == 2
        got = {n.span for n in tree.walk() if n.children}
        assert set(spans) | {(0, len(toks))} <= got
        assert all(a <= b for a, b in got)


def test_derived_tree_yield():
    g = grammar_for("L2R1")
    p = init_params(g, 0)
    toks = (2, 0, 1, 1, 0)
    d = viterbi_parse(g, p, Sentence(toks))
    leaves = [x for x in derived_tree(g, d).leaves() if x not in ("<eps>",)]
    assert leaves == [g.vocab.symbols[t] for t in toks]


def test_constrained_viterbi_respects_gold():
    rng = random.Random(3)
    g = grammar_for("L2R2")
    p = init_params(g, 1)
    for _ in range(20):
        T = rng.randint(2, 6)
        toks = tuple(rng.randrange(3) for _ in range(T))
        gold = random_gold(rng, T)
        d = viterbi_parse(g, p, Sentence(toks, gold), constraints=True)
        spans = {n.span for n in derived_tree(g, d).walk() if n.children}
        assert not any(crosses(a, b) for a in spans for b in gold)


def test_no_parse_under_impossible_constraints():
    g = grammar_for("bigram")
    # the bigram template only builds right-branching trees; (0, 2) is unreachable
    with pytest.raises(NoParseError):
        viterbi_parse(g, init_params(g, 0), Sentence((0, 1, 2), frozenset({(0, 2)})), constraints=True)


def test_deterministic_grammar_gives_its_unique_tree():
    g = grammar_for("L1R1", "ab")
    p = empty_params(g)
    # initial tree: always adjoin R:a on the right, never on the left;
    # R:a never adjoins further except one L:b at its spine node
    ra, lb = g.right_trees[0], g.left_trees[1]
    p.right[0, 0, :] = 0.0
    p.right[0, 0, g.right_column(ra)] = 1.0
    p.left[0, 0, :] = 0.0
    p.left[0, 0, 0] = 1.0
    p.left[ra, 0, :] = 0.0
    p.left[ra, 0, g.left_column(lb)] = 1.0
    p.right[ra, 0, 0] = 1.0
    p.left[lb, 0, 0] = 1.0
    p.right[lb, 0, 0] = 1.0
    d = viterbi_parse(g, p, Sentence((1, 0)))
    assert d.score == pytest.approx(0.0)
    assert extract_brackets(g, d) == set()
    tree = derived_tree(g, d)
    assert [x for x in tree.leaves() if x != "<eps>"] == ["b", "a"]


def test_two_token_sentence_has_no_internal_brackets():
    g = grammar_for("L2R1")
    assert parse_brackets(g, init_params(g, 0), Sentence((0, 1))) == set()


def test_chart_score_matches_derivation():
    g = grammar_for("L1R2")
    p = init_params(g, 8)
    chart = ViterbiChart(g, p, Sentence((0, 2, 1, 1, 2, 0)))
    assert chart.derivation().score == pytest.approx(chart.log2_score)
