"""Comparison systems: dense CNF PCFGs, n-gram models and right-branching brackets."""

from .ngram import NgramModel, ngram_param_count, ngram_train, right_branching_brackets
from .pcfg import Pcfg, pcfg_build, pcfg_param_count, pcfg_train, pcfg_viterbi

__all__ = [
    "NgramModel", "ngram_param_count", "ngram_train", "right_branching_brackets",
    "Pcfg", "pcfg_build", "pcfg_param_count", "pcfg_train", "pcfg_viterbi",
]
