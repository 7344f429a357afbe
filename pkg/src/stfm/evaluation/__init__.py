"""Automatic evaluation: style accuracy, BLEU and n-gram perplexity."""

from typing import Sequence

from ..data import StyleCorpus, strip
from .bleu import corpus_bleu, sentence_bleu
from .classifier import StyleClassifier, train_classifier, transfer_accuracy
from .lm import NgramLM, perplexity, train_lm
from .report import EvalReport, copy_system, evaluate_system, score_outputs, transfer_pairs


def fit_evaluators(corpora: Sequence[StyleCorpus], lm_order: int = 5) -> tuple[StyleClassifier, NgramLM]:
    """Style classifier and Kneser-Ney LM trained on the train splits."""
    clf = train_classifier([(c.style, [strip(s) for s in c.train]) for c in corpora])
    lm = train_lm([strip(s) for c in corpora for s in c.train], order=lm_order)
    return clf, lm


__all__ = [
    "EvalReport",
    "NgramLM",
    "StyleClassifier",
    "copy_system",
    "corpus_bleu",
    "evaluate_system",
    "fit_evaluators",
    "perplexity",
    "score_outputs",
    "sentence_bleu",
    "train_classifier",
    "train_lm",
    "transfer_accuracy",
    "transfer_pairs",
]
