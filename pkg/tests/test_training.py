import json

import numpy as np
import pytest

from pltig.corpus import Sentence
from pltig.errors import ConfigError, TrainingError
from pltig.grammar import init_params, load_model, validate
from pltig.training import (ExpectedCounts, TrainConfig, accumulate_counts, em_train, fit_lambdas,
                            reestimate)

from conftest import grammar_for


@pytest.fixture
def small(toy_corpus):
    vocab, g, gen, corpus = toy_corpus
    return g, corpus[:80], corpus[80:110]


def test_counts_conserve_site_mass(small):
    g, train, _ = small
    c = accumulate_counts(g, init_params(g, 0), train)
    assert c.sentences == len(train) and c.skipped == 0
    assert c.conservation_error(g) < 1e-8
    # each sentence uses the initial tree exactly once
    assert c.occupancy[0, 0] == len(train)


def test_counts_do_not_depend_on_jobs(small):
    g, train, _ = small
    p = init_params(g, 1)
    a = accumulate_counts(g, p, train, jobs=1)
    b = accumulate_counts(g, p, train, jobs=2)
    assert np.array_equal(a.left, b.left) and np.array_equal(a.right, b.right)
    assert a.log2_likelihood == b.log2_likelihood


def test_reestimate_gives_valid_distributions(small):
    g, train, _ = small
    p = init_params(g, 2)
    q = reestimate(g, accumulate_counts(g, p, train), p)
    assert validate(g, q) == []


def test_reestimate_keeps_starved_rows():
    g = grammar_for("L1R1")
    p = init_params(g, 0)
    q = reestimate(g, ExpectedCounts.zeros(g), p)
    assert q == p


def test_em_is_monotone_and_traced(small, tmp_path):
    g, train, held = small
    cfg = TrainConfig(max_iterations=6, early_stopping=False, log_path=str(tmp_path / "log.jsonl"),
                      checkpoint_dir=str(tmp_path / "ck"))
    p, trace = em_train(g, init_params(g, 0), train, held, cfg)
    ll = trace.log_likelihoods()
    assert len(ll) == 7 and trace.iterations == 6
    assert min(np.diff(ll)) > -1e-9
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert [json.loads(x)["iteration"] for x in lines] == list(range(1, 7))
    assert len(list((tmp_path / "ck").glob("iter*.json"))) == 6
    g2, p2 = load_model(tmp_path / "ck" / "iter006.json")
    assert validate(g2, p2) == []
    assert validate(g, p) == []


def test_single_iteration_gives_single_record(small):
    g, train, held = small
    _, trace = em_train(g, init_params(g, 0), train, held, TrainConfig(max_iterations=1))
    assert trace.iterations == 1 and "max_iterations" in trace.stop_reason


def test_bigram_template_converges_after_one_update(small):
    """Every sentence has a single bigram-template derivation, so one M-step reaches the ML fit."""
    _, train, held = small
    g = grammar_for("bigram", "abcd")
    p, trace = em_train(g, init_params(g, 0), train, held, TrainConfig(max_iterations=20))
    assert trace.iterations == 2
    r1, r2 = trace.records
    assert r2.heldout_bits_per_word == pytest.approx(r1.heldout_bits_per_word, abs=1e-9)


def test_smoothing_covers_unseen_events():
    g = grammar_for("L1R1")
    train = [Sentence((0, 1)), Sentence((1, 0)), Sentence((0, 0, 1))] * 5
    held = [Sentence((0, 2)), Sentence((1, 0))]  # tag 2 never occurs in training
    _, plain = em_train(g, init_params(g, 0), train, held, TrainConfig(max_iterations=3))
    assert plain.records[-1].heldout_skipped == 1
    p, smooth = em_train(g, init_params(g, 0), train, held,
                         TrainConfig(max_iterations=3, smoothing="deleted-interpolation"))
    assert smooth.records[-1].heldout_skipped == 0
    assert validate(g, p) == []


def test_fit_lambdas_recovers_mixture():
    rng = np.random.default_rng(0)
    K = 12
    dists = rng.dirichlet(np.full(K, 0.4), size=3)
    truth = np.array([0.5, 0.3, 0.2])
    draws = rng.choice(K, size=200_000, p=truth @ dists)
    weights = np.bincount(draws, minlength=K).astype(float)
    lam = fit_lambdas(dists, weights, iterations=5000, tol=1e-13)
    assert np.allclose(lam, truth, atol=0.02)


def test_config_and_input_errors():
    with pytest.raises(ConfigError):
        TrainConfig(max_iterations=0)
    with pytest.raises(ConfigError):
        TrainConfig(smoothing="katz")
    g = grammar_for("L1R1")
    with pytest.raises(TrainingError):
        em_train(g, init_params(g, 0), [], [Sentence((0,))])
    g = grammar_for("bigram")
    impossible = [Sentence((0, 1, 2), frozenset({(0, 2)}))]
    with pytest.raises(TrainingError):
        em_train(g, init_params(g, 0), impossible, impossible, TrainConfig(constraints=True))
