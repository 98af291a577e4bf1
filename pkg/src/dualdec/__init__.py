"""Dual-inference decoding between slot-filling NLU and semantic-frame NLG.

Train an utterance tagger, a frame-to-text generator, and the two marginal
models (language model, masked frame model); decode with beam search; and
re-rank either direction's hypotheses with the opposite model and the
marginals under adjustable (alpha, beta) weights, without retraining.
"""

__version__ = "0.1.0"

from .decode import (DualScore, DualWeights, Hypothesis, ModelsBundle,
                     beam_search, dual_score_nlg, dual_score_nlu, grid_search,
                     nlg_hypotheses, nlu_hypotheses, rerank)
from .frames import SemanticFrame, frame_to_iob, iob_to_frame
from .textproc import BpeModel, LabelVocab, Utterance, Vocabs, bpe_train

__all__ = [
    "BpeModel", "DualScore", "DualWeights", "Hypothesis", "LabelVocab",
    "ModelsBundle", "SemanticFrame", "Utterance", "Vocabs", "beam_search",
    "bpe_train", "dual_score_nlg", "dual_score_nlu", "frame_to_iob",
    "grid_search", "iob_to_frame", "nlg_hypotheses", "nlu_hypotheses", "rerank",
]
