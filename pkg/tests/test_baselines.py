import math
import random

import numpy as np
import pytest

from pltig.baselines.ngram import (BOS, load_ngram, ngram_param_count, ngram_train, right_branching_brackets,
                                   save_ngram)
from pltig.baselines.pcfg import (generator_pcfg, load_pcfg, pcfg_build, pcfg_counts, pcfg_log2_probs,
                                  pcfg_param_count, pcfg_reestimate, pcfg_sample, pcfg_train, pcfg_validate,
                                  pcfg_viterbi, save_pcfg)
from pltig.chart import corpus_log2_probs
from pltig.corpus import Sentence, Vocabulary, crosses
from pltig.errors import ConfigError
from pltig.grammar import init_params
from pltig.training import TrainConfig, em_train

from conftest import grammar_for
from oracles import pcfg_parses


# -- PCFG ------------------------------------------------------------------


@pytest.mark.parametrize("M,V,count", [(15, 32, 3855), (20, 32, 8640), (23, 48, 13271)])
def test_pcfg_parameter_counts(M, V, count):
    assert pcfg_param_count(M, V) == count
    g = pcfg_build(Vocabulary([f"t{i}" for i in range(V)]), M, seed=0)
    assert g.binary.size + g.lexical.size == count
    assert pcfg_validate(g) == []


def test_pcfg_inside_and_viterbi_match_enumeration():
    rng = random.Random(0)
    for trial in range(30):
        V, M = rng.randint(1, 3), rng.randint(1, 3)
        g = pcfg_build(Vocabulary("abc"[:V]), M, seed=trial)
        T = rng.randint(1, 5)
        toks = tuple(rng.randrange(V) for _ in range(T))
        parses = list(pcfg_parses(g.binary, g.lexical, toks))
        total = math.fsum(p for p, _ in parses)
        assert 2 ** pcfg_log2_probs(g, [Sentence(toks)])[0] == pytest.approx(total, rel=1e-10)
        brackets, score = pcfg_viterbi(g, Sentence(toks))
        best = max(p for p, _ in parses)
        assert score == pytest.approx(math.log2(best), abs=1e-9)
        tied = [{x for x in sp if x[1] - x[0] < T} for p, sp in parses if p >= best * (1 - 1e-12)]
        assert brackets in tied
        if T >= 3:
            gold = frozenset({(0, 2)})
            allowed = math.fsum(p for p, sp in parses if not any(crosses(a, gold_) for a in sp for gold_ in gold))
            got = 2 ** pcfg_log2_probs(g, [Sentence(toks, gold)], constraints=True)[0]
            assert got == pytest.approx(allowed, rel=1e-10)


def test_pcfg_counts_are_gradients():
    g = pcfg_build(Vocabulary("abc"), 3, seed=4)
    sents = [Sentence((0, 1, 2, 1)), Sentence((2, 2, 1), frozenset({(0, 2)}))]
    c = pcfg_counts(g, sents, constraints=True)
    base = pcfg_log2_probs(g, sents, True).sum() * math.log(2)
    eps = 1e-6
    for table, idx in [("binary", (0, 1, 2)), ("binary", (1, 0, 0)), ("lexical", (0, 1)), ("lexical", (2, 2))]:
        h = g.copy()
        getattr(h, table)[idx] *= 1 + eps
        fd = (pcfg_log2_probs(h, sents, True).sum() * math.log(2) - base) / eps
        assert getattr(c, table)[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7)
    # a tree over T tokens uses T-1 binary and T lexical rules
    assert c.binary.sum() == pytest.approx(3 + 2)
    assert c.lexical.sum() == pytest.approx(4 + 3)
    assert pcfg_validate(pcfg_reestimate(c, g)) == []


def test_pcfg_em_monotone_and_file_round_trip(tmp_path):
    vocab = Vocabulary("abcd")
    gen = generator_pcfg(vocab, 3, seed=1)
    data = pcfg_sample(gen, 120, seed=2, max_length=10)
    assert all(len(s) <= 10 for s in data)
    g, trace = pcfg_train(pcfg_build(vocab, 3, seed=0), data[:100], data[100:],
                          TrainConfig(max_iterations=8, early_stopping=False))
    assert min(np.diff(trace.log_likelihoods())) > -1e-9
    save_pcfg(tmp_path / "p.json", g, {"model_id": "x"})
    h = load_pcfg(tmp_path / "p.json")
    assert np.array_equal(h.binary, g.binary) and np.array_equal(h.lexical, g.lexical)


# -- n-grams ---------------------------------------------------------------


def test_ngram_parameter_formula():
    assert [ngram_param_count(32, 2), ngram_param_count(32, 3), ngram_param_count(48, 2),
            ngram_param_count(48, 3)] == [1088, 34880, 2400, 115296]


def test_ngram_ml_probabilities():
    v = Vocabulary("ab")
    m = ngram_train([Sentence((0, 1)), Sentence((0, 1)), Sentence((0,))], v, 2, smoothing="none")
    assert m.prob((BOS,), 0) == 1.0
    assert m.prob((0,), 1) == pytest.approx(2 / 3)
    assert m.prob((0,), m.eos_index) == pytest.approx(1 / 3)
    assert m.log2_prob(Sentence((1,))) == -math.inf
    no_eos = ngram_train([Sentence((0, 1))], v, 2, smoothing="none", eos=False)
    assert no_eos.log2_prob(Sentence((0, 1))) == 0.0


def test_ngram_interpolation_is_normalized():
    v = Vocabulary("abc")
    rng = random.Random(0)
    data = [Sentence(tuple(rng.randrange(3) for _ in range(rng.randint(1, 6)))) for _ in range(80)]
    m = ngram_train(data[:60], v, 3, heldout=data[60:])
    assert sum(m.lambdas) == pytest.approx(1.0) and min(m.lambdas) >= 0
    for h in [(BOS, BOS), (0, 1), (2, 2), (1, 0)]:
        assert sum(m.prob(h, w) for w in range(m.outcomes)) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        ngram_train(data, v, 3)  # interpolation without held-out data


def test_ngram_file_round_trip(tmp_path):
    v = Vocabulary("ab")
    m = ngram_train([Sentence((0, 1, 1)), Sentence((1,))], v, 3, heldout=[Sentence((0, 1))])
    save_ngram(tmp_path / "n.json", m)
    m2 = load_ngram(tmp_path / "n.json")
    assert m2.lambdas == m.lambdas and m2.counts == m.counts


def test_right_branching():
    assert right_branching_brackets("DT NN VBZ NN".split()) == {(1, 4), (2, 4)}
    assert right_branching_brackets(["DT", "NN", "VBZ", "."]) == {(1, 3)}
    assert right_branching_brackets(["DT", "NN"]) == set()


def test_bigram_template_equals_ml_bigram(toy_corpus):
    vocab, _, _, corpus = toy_corpus
    train, held, test = corpus[:200], corpus[200:250], corpus[250:]
    g = grammar_for("bigram", vocab.symbols)
    p, _ = em_train(g, init_params(g, 3), train, held, TrainConfig())
    ng = ngram_train(train, vocab, 2, smoothing="none")
    a, b = corpus_log2_probs(g, p, test), ng.log2_probs(test)
    assert np.array_equal(np.isfinite(a), np.isfinite(b))
    fin = np.isfinite(a)
    assert np.max(np.abs(a[fin] - b[fin])) < 1e-8
