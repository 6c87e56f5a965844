"""Span-level binary codes from a bit-level CKY chart, trained contrastively.

Modules: ``treebank`` (trees, CNF, NER reduction), ``grad`` (reverse-mode
autodiff), ``chart`` (inside/outside, marginals, Viterbi, brute-force
oracle), ``encoder``, ``contrastive``, ``codebook``, ``trainer``,
``evalmetrics``, ``synthdata`` and ``cli``.
"""
from .chart import ScoreChart, enumerate_oracle, inside, marginals, outside, viterbi_decode
from .codebook import Codebook
from .contrastive import STRATEGIES, batch_loss, binarize, similarity
from .encoder import Vocab, init_params, score_sentences
from .evalmetrics import F1Report, labeled_f1, ner_f1
from .trainer import TrainConfig, train
from .treebank import Tree, from_cnf, parse_bracketed, spans_of, to_cnf

__version__ = "0.1.0"
