"""Marginal-based similarity and the contrastive losses over target spans.

All six losses share one shape::

    loss(i) = logsumexp_{j ∈ negatives(i)} s(i, j) - positive_term(i)

where the negative pool is either every candidate (N∪P) or the candidates
with a different label plus the twin of ``i`` itself (N∪S), and the positive
term is ``s(i, i)``, the mean of ``s`` over same-label candidates, or their
logsumexp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad as G


class EmptyNegativeSet(ValueError):
    pass


@dataclass(frozen=True)
class SelectionStrategy:
    negatives: str  # "N∪P" | "N∪S"
    positives: str  # "S" | "mean-P" | "max-P"

    def __post_init__(self):
        if self.negatives not in ("N∪P", "N∪S"):
            raise ValueError(f"unknown negative rule {self.negatives!r}")
        if self.positives not in ("S", "mean-P", "max-P"):
            raise ValueError(f"unknown positive rule {self.positives!r}")


STRATEGIES = {
    "self": SelectionStrategy("N∪P", "S"),
    "sup": SelectionStrategy("N∪P", "mean-P"),
    "sup-max": SelectionStrategy("N∪P", "max-P"),
    "hash": SelectionStrategy("N∪S", "S"),
    "hash-mean": SelectionStrategy("N∪S", "mean-P"),
    "max": SelectionStrategy("N∪S", "max-P"),
}


def get_strategy(strategy):
    if isinstance(strategy, SelectionStrategy):
        return strategy
    try:
        return STRATEGIES[strategy]
    except KeyError:
        raise ValueError(f"unknown loss {strategy!r}; choose from {sorted(STRATEGIES)}") from None


def binarize(pos, neg):
    """+1 where the +1 marginal is strictly larger, else -1."""
    pos = pos.value if isinstance(pos, G.Var) else np.asarray(pos)
    neg = neg.value if isinstance(neg, G.Var) else np.asarray(neg)
    return np.where(pos > neg, 1, -1).astype(np.int64)


def similarity(pos_i, neg_i, code):
    """``(1/K) Σ_k μ_k(l_i, r_i, c_k)`` for one span's bit marginals and one code."""
    code = np.asarray(code)
    pos_i, neg_i = G._wrap(pos_i), G._wrap(neg_i)
    picked = G.where(code > 0, pos_i, neg_i)
    return G.mean(picked)


def similarity_matrix(pos, neg, codes):
    """``s[i, j]`` for spans ``i`` (rows of ``pos``/``neg``, shape (M, K)) against codes ``j``."""
    codes = np.asarray(codes)
    K = codes.shape[-1]
    up = (codes > 0).astype(np.float64)
    down = 1.0 - up
    return (G.einsum("ik,jk->ij", pos, up) + G.einsum("ik,jk->ij", neg, down)) / float(K)


def select_instances(i, labels, strategy):
    """Candidate indices ``(negatives, positives)`` for instance ``i``.

    Candidates are the opposite-view twins of every target span in the batch;
    candidate ``i`` is the twin of instance ``i``.
    """
    strategy = get_strategy(strategy)
    labels = np.asarray(labels, dtype=object)
    same = labels == labels[i]
    idx = np.arange(len(labels))
    if strategy.negatives == "N∪P":
        negatives = idx
    else:
        negatives = idx[~same | (idx == i)]
    positives = idx[same] if strategy.positives != "S" else np.array([i])
    return negatives, positives


def _masks(labels, strategy):
    labels = np.asarray(labels, dtype=object)
    m = len(labels)
    same = labels[:, None] == labels[None, :]
    eye = np.eye(m, dtype=bool)
    neg = np.ones((m, m), dtype=bool) if strategy.negatives == "N∪P" else (~same | eye)
    pos = eye if strategy.positives == "S" else same
    return neg, pos, eye


def losses(sim, labels, strategy, temperature=1.0):
    """Per-instance losses ``(M,)`` from a square similarity matrix."""
    strategy = get_strategy(strategy)
    neg, pos, eye = _masks(labels, strategy)
    s = sim if temperature == 1.0 else sim / float(temperature)
    neg_term = G.logsumexp(s, axis=1, where=neg)
    if strategy.positives == "S":
        pos_term = G.sum(G.where(eye, s, 0.0), axis=1)
    elif strategy.positives == "mean-P":
        pos_term = G.sum(G.where(pos, s, 0.0), axis=1) / pos.sum(axis=1).astype(np.float64)
    else:
        pos_term = G.logsumexp(s, axis=1, where=pos)
    return neg_term - pos_term


def loss(i, sims, labels, strategy, temperature=1.0):
    """Loss of instance ``i`` given its similarities to every candidate."""
    strategy = get_strategy(strategy)
    sims = G._wrap(sims)
    negatives, positives = select_instances(i, labels, strategy)
    s = sims if temperature == 1.0 else sims / float(temperature)
    neg_term = G.logsumexp(s[negatives])
    if strategy.positives == "S":
        pos_term = s[i]
    elif strategy.positives == "mean-P":
        pos_term = G.mean(s[positives])
    else:
        pos_term = G.logsumexp(s[positives])
    return neg_term - pos_term


@dataclass
class TargetSpans:
    """Flattened target-tree spans of a batch: sentence index, fenceposts and gold label."""

    sent: np.ndarray
    l: np.ndarray
    r: np.ndarray
    labels: list

    @classmethod
    def from_trees(cls, span_lists):
        sent, ls, rs, labels = [], [], [], []
        for b, spans in enumerate(span_lists):
            for sp in spans:
                sent.append(b)
                ls.append(sp.l)
                rs.append(sp.r)
                labels.append(sp.label)
        return cls(np.array(sent), np.array(ls), np.array(rs), labels)

    def __len__(self):
        return len(self.labels)

    def gather(self, mc):
        idx = (self.sent, self.l, self.r)
        return mc.pos[idx], mc.neg[idx]


def batch_loss(marg1, marg2, targets, strategy, temperature=1.0):
    """Mean over target spans of the two cross-view losses.

    Similarities of view-1 marginals are taken against codes binarized from
    view 2, and vice versa.  Codes are constants.
    """
    strategy = get_strategy(strategy)
    labels = np.asarray(targets.labels, dtype=object)
    if len(labels) == 0 or np.all(labels == labels[0]):
        raise EmptyNegativeSet("every target span in the batch shares one label")
    pos1, neg1 = targets.gather(marg1)
    pos2, neg2 = targets.gather(marg2)
    codes1, codes2 = binarize(pos1, neg1), binarize(pos2, neg2)
    l12 = losses(similarity_matrix(pos1, neg1, codes2), labels, strategy, temperature)
    l21 = losses(similarity_matrix(pos2, neg2, codes1), labels, strategy, temperature)
    return G.sum(l12 + l21) / float(len(labels))
