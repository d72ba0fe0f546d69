"""Probabilistic lexicalized tree insertion grammars: templates, inside-outside
training, Viterbi parsing, baselines and evaluation."""

from .corpus import Sentence, SplitSpec, Vocabulary, load_corpus, split_corpus
from .grammar import Grammar, ParamSet, TemplateConfig, build_template, init_params, param_count
from .chart import compute_inside, compute_outside, sentence_log_prob
from .training import TrainConfig, em_train
from .viterbi import viterbi_parse

__version__ = "0.1.0"

__all__ = [
    "Sentence", "SplitSpec", "Vocabulary", "load_corpus", "split_corpus",
    "Grammar", "ParamSet", "TemplateConfig", "build_template", "init_params", "param_count",
    "compute_inside", "compute_outside", "sentence_log_prob",
    "TrainConfig", "em_train", "viterbi_parse",
]
