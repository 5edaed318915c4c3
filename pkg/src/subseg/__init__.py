"""Subword segmental language modelling toolkit.

Joint model: a character-level LSTM over unsegmented text whose output
distribution marginalizes over all segmentations of each word via a
semi-Markov dynamic program, mixing an open-vocabulary character decoder
with a closed subword lexicon. Includes Viterbi segmentation, baseline
LMs/segmenters (char/BPE/unigram LM, entropy criteria) and evaluation
(BPC, morpheme identification, boundary identification).
"""

from .corpus import CharSequence, CharVocab, load_corpus, make_sequence
from .errors import DataError, NumericError, UsageError
from .lexicon import Lexicon, build_lexicon, load_lexicon, save_lexicon
from .sslm import SslmConfig, SslmParams, forward_marginal, nll_loss, viterbi_segment

__all__ = [
    "CharSequence",
    "CharVocab",
    "DataError",
    "Lexicon",
    "NumericError",
    "SslmConfig",
    "SslmParams",
    "UsageError",
    "build_lexicon",
    "forward_marginal",
    "load_corpus",
    "load_lexicon",
    "make_sequence",
    "nll_loss",
    "save_lexicon",
    "viterbi_segment",
]

__version__ = "0.1.0"
