import random

import pytest

from pltig.corpus import Vocabulary
from pltig.grammar import TemplateConfig, build_template
from pltig.sampling import generator_params, sample_corpus

TEMPLATES = ["bigram", "L1R0", "L0R1", "L1R1", "L2R1", "L1R2", "L2R2"]


@pytest.fixture
def abc():
    return Vocabulary(["a", "b", "c"])


def grammar_for(name, symbols="abc"):
    return build_template(Vocabulary(list(symbols)), TemplateConfig.parse(name))


def random_gold(rng: random.Random, T: int, keep: float = 0.6) -> frozenset:
    """A random non-crossing bracket set: spans of a random binary tree, thinned."""
    spans = set()

    def rec(s, t):
        if t - s < 2:
            return
        spans.add((s, t))
        r = rng.randint(s + 1, t - 1)
        rec(s, r)
        rec(r, t)

    rec(0, T)
    return frozenset(x for x in spans if rng.random() < keep)


@pytest.fixture(scope="session")
def toy_corpus():
    """Sampled L1R1 corpus over four tags with gold brackets."""
    vocab = Vocabulary(["DT", "JJ", "NN", "VB"])
    g = build_template(vocab, TemplateConfig.parse("L1R1"))
    gen = generator_params(g, 5, adjoin=0.35)
    return vocab, g, gen, sample_corpus(g, gen, 300, seed=1, max_length=12)


def pytest_terminal_summary(terminalreporter):
    from _verdicts import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda x: int(x.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
