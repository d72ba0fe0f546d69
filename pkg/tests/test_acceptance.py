"""Acceptance checks.  Each test prints one PASS/FAIL line (criterion 10 prints
REPORT: it describes convergence speed and asserts nothing).

Run alone with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``; the lines are repeated in pytest's
terminal summary.
"""

import math
import random
import time

import mpmath
import numpy as np
import pytest

from pltig.baselines.ngram import ngram_param_count, ngram_train
from pltig.baselines.pcfg import (Pcfg, generator_pcfg, pcfg_build, pcfg_log2_probs, pcfg_param_count,
                                  pcfg_sample, pcfg_train)
from pltig.chart import compute_inside, compute_outside, corpus_log2_probs, inside_batch, string_mass, tables
from pltig.corpus import Sentence, Vocabulary
from pltig.evaluation import cross_entropy_from_scores, crossing_brackets, paired_ttest
from pltig.grammar import TemplateConfig, build_template, init_params, param_count
from pltig.reference import ReferenceChart
from pltig.sampling import generator_params, sample_corpus
from pltig.training import TrainConfig, em_train, heldout_bits
from pltig.viterbi import parse_brackets

from _verdicts import record
from oracles import brute_prob

ORACLE_TEMPLATES = ["bigram", "L1R0", "L0R1", "L1R1", "L2R0", "L0R2", "L2R1", "L1R2", "L2R2"]
RECOVERY_TOLERANCE = 0.1  # bits/word
MAX_LENGTH = 15


def _tags(n):
    return Vocabulary([f"t{i}" for i in range(n)])


def _rel(x, y):
    top = max(abs(x), abs(y))
    return abs(x - y) / top if top > 0 else 0.0


@pytest.fixture(scope="module")
def oracle_instances():
    """Random (grammar, params, sentence) triples with V <= 3, T <= 5."""
    rng = random.Random(2024)
    out = []
    for name in ORACLE_TEMPLATES:
        for V in (1, 2, 3):
            g = build_template(_tags(V), TemplateConfig.parse(name))
            for _ in range(8):
                p = init_params(g, rng.randrange(10**6))
                T = rng.randint(1, 5)
                out.append((name, g, p, tuple(rng.randrange(V) for _ in range(T))))
    return out


def test_criterion_01_parameter_counts():
    pltig = {(32, "L2R1"): 6402, (32, "L2R2"): 8514, (48, "L2R1"): 14210, (48, "L2R2"): 18914}
    got = {k: param_count(build_template(_tags(k[0]), TemplateConfig.parse(k[1]))) for k in pltig}
    pcfg = {(15, 32): 3855, (20, 32): 8640, (23, 48): 13271}
    got_pcfg = {}
    for (M, V) in pcfg:
        g = pcfg_build(_tags(V), M)
        got_pcfg[(M, V)] = g.binary.size + g.lexical.size
        assert pcfg_param_count(M, V) == got_pcfg[(M, V)]
    ngram = {(32, 2): 1088, (32, 3): 34880, (48, 2): 2400, (48, 3): 115296}
    got_ngram = {k: ngram_param_count(*k) for k in ngram}
    ok = got == pltig and got_pcfg == pcfg and got_ngram == ngram
    record(1, "parameter counts", ok,
           f"PLTIG {sorted(got.values())}, PCFG {sorted(got_pcfg.values())}, n-gram {sorted(got_ngram.values())}")
    assert ok


def test_criterion_02_inside_matches_enumeration(oracle_instances):
    worst = 0.0
    for name, g, p, toks in oracle_instances:
        brute = brute_prob(g, p, toks)
        chart = compute_inside(g, p, Sentence(toks)).sentence_prob
        worst = max(worst, _rel(chart, brute))
    n = len(oracle_instances)
    ok = n >= 200 and worst <= 1e-10
    record(2, "inside vs enumeration", ok, f"{n} instances, worst relative error {worst:.2e} (limit 1e-10)")
    assert ok


def test_criterion_03_outside_consistency(oracle_instances):
    anchor_worst = lr_worst = 0.0
    for name, g, p, toks in oracle_instances:
        s = Sentence(toks)
        ins = compute_inside(g, p, s)
        out = compute_outside(g, p, s, ins)
        P = ins.sentence_prob
        T = len(toks)
        for i in range(T):
            total = sum(out.combined(i, i + 1, t.anchor_node.id) * ins.combined(i, i + 1, t.anchor_node.id)
                        for t in g.trees[1:])
            anchor_worst = max(anchor_worst, _rel(total, P))
        ref = ReferenceChart(g, p, toks)
        for tree in g.trees[1:]:
            for node in tree.spine:
                for a in range(T):
                    for b in range(a + 2, T + 1):
                        lr_worst = max(lr_worst, _rel(ins.raw(a, b, node.id, "LR"),
                                                      math.exp(ref.e(a, b, node.id, "LR"))))
    ok = anchor_worst <= 1e-8 and lr_worst <= 1e-12
    record(3, "outside consistency", ok,
           f"anchor inside*outside worst {anchor_worst:.2e} (limit 1e-8); "
           f"factored vs literal LR worst {lr_worst:.2e} (limit 1e-12)")
    assert ok


def test_criterion_04_em_monotonicity():
    vocab = _tags(5)
    g = build_template(vocab, TemplateConfig.parse("L2R1"))
    gen = generator_params(g, 7, adjoin=0.2)
    data = sample_corpus(g, gen, 260, seed=8, max_length=10)
    train, held = data[:200], data[200:]
    t0 = time.perf_counter()
    _, trace = em_train(g, init_params(g, 0), train, held,
                        TrainConfig(max_iterations=30, early_stopping=False))
    steps = np.diff(trace.log_likelihoods())
    ok = trace.iterations == 30 and steps.min() >= -1e-9
    record(4, "EM monotonicity", ok,
           f"{trace.iterations} iterations on {len(train)} sentences (T<=10), smallest log-lik step "
           f"{steps.min():.3e} (slack -1e-9), {time.perf_counter() - t0:.1f}s")
    assert ok


# -- generator corpora shared by criteria 5, 6 and 10 -----------------------


@pytest.fixture(scope="module")
def pltig_world():
    vocab = _tags(6)
    g = build_template(vocab, TemplateConfig.parse("L2R1"))
    gen = generator_params(g, 1, adjoin=0.2, initial_adjoin=0.9, concentration=0.3)
    data = sample_corpus(g, gen, 5500, seed=2, max_length=MAX_LENGTH)
    return vocab, g, gen, data[:2000], data[2000:2500], data[2500:]


@pytest.fixture(scope="module")
def pltig_recovery(pltig_world):
    vocab, g, gen, train, held, test = pltig_world
    t0 = time.perf_counter()
    params, trace = em_train(g, init_params(g, 0), train, held,
                             TrainConfig(max_iterations=200, min_entropy_gain=1e-4))
    return params, trace, time.perf_counter() - t0


def test_criterion_05_bigram_equivalence(pltig_world):
    vocab, _, _, train, held, test = pltig_world
    g = build_template(vocab, TemplateConfig.bigram())
    params, _ = em_train(g, init_params(g, 3), train, held, TrainConfig())
    bigram = ngram_train(train, vocab, 2, smoothing="none")
    a, b = corpus_log2_probs(g, params, test), bigram.log2_probs(test)
    same_support = bool(np.array_equal(np.isfinite(a), np.isfinite(b)))
    fin = np.isfinite(a)
    diff = float(np.max(np.abs(a[fin] - b[fin])))
    lengths = [len(s) for s in test]
    ha = cross_entropy_from_scores(a, lengths).bits_per_word
    hb = cross_entropy_from_scores(b, lengths).bits_per_word
    ok = same_support and diff <= 1e-8 and abs(ha - hb) <= 1e-8
    record(5, "bigram equivalence", ok,
           f"max per-sentence |dlog2p| {diff:.2e} over {int(fin.sum())} sentences, "
           f"H {ha:.6f} vs {hb:.6f} bits/word")
    assert ok


def _normalized_scores(log2_probs, mass):
    """Scores under the sampling distribution: model mass renormalized over the lengths sampled."""
    return np.asarray(log2_probs) - math.log2(mass)


def test_criterion_06_generator_recovery(pltig_world, pltig_recovery):
    vocab, g, gen, train, held, test = pltig_world
    params, trace, seconds = pltig_recovery
    Z = float(string_mass(g, gen, MAX_LENGTH).sum())
    gen_h = heldout_bits(_normalized_scores(corpus_log2_probs(g, gen, test), Z), test)[0]
    raw_h = heldout_bits(corpus_log2_probs(g, gen, test), test)[0]
    fit_h = heldout_bits(corpus_log2_probs(g, params, test), test)[0]

    pvocab = _tags(6)
    pgen = generator_pcfg(pvocab, 3, seed=0)
    pdata = pcfg_sample(pgen, 5500, seed=2, max_length=MAX_LENGTH)
    ptrain, pheld, ptest = pdata[:2000], pdata[2000:2500], pdata[2500:]
    collapsed = Pcfg(Vocabulary(["*"]), pgen.binary, pgen.lexical.sum(axis=1, keepdims=True), pgen.start)
    pZ = float(np.exp2(pcfg_log2_probs(collapsed, [Sentence((0,) * T) for T in range(1, MAX_LENGTH + 1)])).sum())
    pgen_h = heldout_bits(_normalized_scores(pcfg_log2_probs(pgen, ptest), pZ), ptest)[0]
    t0 = time.perf_counter()
    fitted, ptrace = pcfg_train(pcfg_build(pvocab, 3, seed=0), ptrain, pheld,
                                TrainConfig(max_iterations=300, min_entropy_gain=1e-4))
    pfit_h = heldout_bits(pcfg_log2_probs(fitted, ptest), ptest)[0]
    pseconds = time.perf_counter() - t0

    gap, pgap = fit_h - gen_h, pfit_h - pgen_h
    ok = abs(gap) <= RECOVERY_TOLERANCE and abs(pgap) <= RECOVERY_TOLERANCE
    record(6, "generator recovery", ok,
           f"PLTIG L2R1 {fit_h:.4f} vs generator {gen_h:.4f} (gap {gap:+.4f}; unnormalized generator "
           f"{raw_h:.4f}; {trace.iterations} it, {seconds:.0f}s); PCFG M=3 {pfit_h:.4f} vs {pgen_h:.4f} "
           f"(gap {pgap:+.4f}; {ptrace.iterations} it, {pseconds:.0f}s); tolerance {RECOVERY_TOLERANCE}")
    assert ok


def test_criterion_07_constrained_training():
    vocab = _tags(6)
    g = build_template(vocab, TemplateConfig.parse("L1R1"))
    gen = generator_params(g, 2, adjoin=0.2, initial_adjoin=0.9, concentration=0.3)
    data = sample_corpus(g, gen, 1600, seed=3, max_length=MAX_LENGTH)
    train, held, test = data[:1000], data[1000:1200], data[1200:]
    gold = [s.gold_brackets for s in test]
    lengths = [len(s) for s in test]
    rates, violations = {}, 0
    for constrained in (False, True):
        params, _ = em_train(g, init_params(g, 2), train, held,
                             TrainConfig(max_iterations=60, constraints=constrained))
        free = corpus_log2_probs(g, params, train)
        bound = corpus_log2_probs(g, params, train, constraints=True)
        violations += int((bound > free + 1e-12).sum())
        cands = [parse_brackets(g, params, s.without_brackets()) for s in test]
        rates[constrained] = crossing_brackets(cands, gold, lengths)
    ok = violations == 0 and rates[True] > rates[False]
    record(7, "constrained training", ok,
           f"{violations} sentences with constrained prob > unconstrained; non-crossing rate "
           f"{rates[True]:.2f}% constrained vs {rates[False]:.2f}% unconstrained")
    assert ok


def _cell_updates(tab, lengths, rng):
    return [inside_batch(tab, rng.integers(0, 3, size=(1, T))).cell_updates for T in lengths]


def _exponent(lengths, counts):
    return float(np.polyfit(np.log(lengths), np.log(counts), 1)[0])


def test_criterion_08_cubic_chart():
    g = build_template(_tags(3), TemplateConfig.parse("L2R1"))
    tab = tables(g, init_params(g, 0))
    rng = np.random.default_rng(0)
    lengths = [10, 20, 40]
    updates = _cell_updates(tab, lengths, rng)
    slope = _exponent(lengths, updates)
    # lower-order terms still weigh at T=10; longer sentences show the limit
    tail = [40, 80, 160]
    tail_slope = _exponent(tail, _cell_updates(tab, tail, rng))
    ok = 2.7 <= slope <= 3.3
    record(8, "cubic chart", ok,
           f"cell updates {updates} for T={lengths}: fitted exponent {slope:.3f} (range [2.7, 3.3]); "
           f"T={tail} gives {tail_slope:.3f}")
    assert ok


def _t_two_sided_p(t, df):
    """Two-sided Student-t tail via the regularized incomplete beta function."""
    x = mpmath.mpf(df) / (df + mpmath.mpf(t) ** 2)
    return float(mpmath.betainc(mpmath.mpf(df) / 2, mpmath.mpf(1) / 2, 0, x, regularized=True))


def test_criterion_09_metrics_and_statistics():
    V = 17
    rng = np.random.default_rng(5)
    lengths = rng.integers(1, 30, size=50)
    ce = cross_entropy_from_scores([-n * math.log2(V) for n in lengths], lengths).bits_per_word
    uniform_ok = abs(ce - math.log2(V)) <= 1e-12

    golds = [{(0, 2), (0, 5), (2, 5), (3, 5)}, {(1, 3), (0, 3)}, {(0, 4), (1, 4), (2, 4)}]
    identity = crossing_brackets(golds, golds, [5, 3, 4])

    worst_p, antisym = 0.0, True
    for trial in range(20):
        a = rng.normal(3.0, 0.3, 10)
        b = a + rng.normal(rng.uniform(-0.2, 0.2), 0.15, 10)
        r, s = paired_ttest(a, b), paired_ttest(b, a)
        antisym &= r.t == -s.t and r.p == s.p and {r.verdict, s.verdict} in ({"--"}, {"better", "worse"})
        worst_p = max(worst_p, abs(r.p - _t_two_sided_p(r.t, r.df)))
    ok = uniform_ok and identity == 100.0 and antisym and worst_p <= 1e-10
    record(9, "metrics and statistics", ok,
           f"uniform H {ce:.15f} vs log2 V {math.log2(V):.15f}; crossing identity {identity:.1f}%; "
           f"t-test antisymmetric={antisym}; worst |p - incomplete-beta p| {worst_p:.1e}")
    assert ok


def _iterations_to_converge(trace, threshold=1e-3):
    """First iteration whose held-out gain falls below ``threshold``."""
    prev = trace.initial_heldout_bits
    for rec in trace.records:
        if prev - rec.heldout_bits_per_word < threshold:
            return rec.iteration
        prev = rec.heldout_bits_per_word
    return trace.iterations


def test_criterion_10_convergence_shape(pltig_world, pltig_recovery):
    vocab, g, _, train, held, _ = pltig_world
    _, trace, _ = pltig_recovery
    M = 6  # 252 parameters against 266 for L2R1 over six tags
    _, ptrace = pcfg_train(pcfg_build(vocab, M, seed=0), train, held,
                           TrainConfig(max_iterations=150, min_entropy_gain=1e-4))
    it_pltig, it_pcfg = _iterations_to_converge(trace), _iterations_to_converge(ptrace)
    record(10, "convergence shape", None,
           f"iterations to a held-out gain below 0.001 bits: PLTIG L2R1 ({param_count(g)} params) {it_pltig}, "
           f"PCFG M={M} ({pcfg_param_count(M, len(vocab))} params) {it_pcfg}; "
           f"PLTIG faster: {it_pltig < it_pcfg}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
