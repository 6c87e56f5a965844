"""Token encoder and the attention hash layer.

The encoder is deliberately small: token + position embeddings followed by a
single tanh layer that mixes each token with its immediate neighbours.  The
hash layer keeps only per-bit query/key projections; the +1 score of bit k on
span [l, r) is the scaled bilinear form of the first and last token states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grad as G
from .chart import ScoreChart, valid_cells

UNK = "<unk>"
MASK = "<mask>"


class InvalidDims(ValueError):
    pass


class SentenceTooLong(ValueError):
    pass


class Vocab:
    """Token ↔ id map; ids 0 and 1 are reserved for UNK and MASK."""

    def __init__(self, tokens=()):
        self.itos = [UNK, MASK]
        self.stoi = {UNK: 0, MASK: 1}
        for tok in tokens:
            self.add(tok)

    def add(self, tok):
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    @classmethod
    def from_corpus(cls, sentences):
        vocab = cls()
        for sent in sentences:
            for tok in sent:
                vocab.add(tok)
        return vocab

    @property
    def unk_id(self):
        return 0

    @property
    def mask_id(self):
        return 1

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens):
        return np.array([self.stoi.get(t, 0) for t in tokens], dtype=np.int64)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.itos:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f]
        if lines[:2] != [UNK, MASK]:
            raise ValueError(f"{path}: lines 0/1 must be {UNK} and {MASK}")
        return cls(lines[2:])


PARAM_NAMES = ("tok_emb", "pos_emb", "mix_w", "mix_prev", "mix_next", "mix_b", "w_query", "w_key")


@dataclass
class EncoderParams:
    vocab: Vocab
    d: int
    K: int
    max_len: int = 64
    p_drop: float = 0.1
    p_mask: float = 0.15
    tensors: dict = field(default_factory=dict)

    @property
    def dk(self):
        return math.ceil(self.d / self.K)

    def __getitem__(self, name):
        return self.tensors[name]


def init_params(vocab, d=64, K=12, seed=0, max_len=64, p_drop=0.1, p_mask=0.15):
    """Uniform(-1/√d, 1/√d) initialisation, deterministic in ``seed``."""
    if K < 1 or d < K:
        raise InvalidDims(f"need d >= K >= 1 (got d={d}, K={K})")
    dk = math.ceil(d / K)
    rng = np.random.default_rng([seed, 0x1A17])
    scale = 1.0 / math.sqrt(d)
    shapes = {
        "tok_emb": (len(vocab), d),
        "pos_emb": (max_len, d),
        "mix_w": (d, d),
        "mix_prev": (d, d),
        "mix_next": (d, d),
        "mix_b": (d,),
        "w_query": (K, dk, d),
        "w_key": (K, dk, d),
    }
    tensors = {}
    for name in PARAM_NAMES:
        value = rng.uniform(-scale, scale, size=shapes[name])
        if name == "mix_b":
            value = np.zeros(shapes[name])
        tensors[name] = G.param(value, name=name)
    return EncoderParams(vocab, d, K, max_len, p_drop, p_mask, tensors)


def _shift_matrices(n):
    prev = np.eye(n, k=-1)  # row i picks token i-1
    nxt = np.eye(n, k=1)
    return prev, nxt


def pad_ids(params, sentences):
    """Token ids padded to the longest sentence, plus lengths."""
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    n = int(lengths.max())
    if n > params.max_len:
        raise SentenceTooLong(f"sentence of {n} tokens exceeds max_len={params.max_len}")
    ids = np.zeros((len(sentences), n), dtype=np.int64)
    for i, sent in enumerate(sentences):
        ids[i, : len(sent)] = params.vocab.encode(sent)
    return ids, lengths


def encode(params, sentences, mode="eval", rng=None):
    """Hidden states ``(B, N, d)`` for a batch of token lists.

    In ``"train"`` mode each token is independently replaced by MASK with
    probability ``p_mask`` and dropout is applied to the states; both draw from
    ``rng``.  ``"eval"`` mode is deterministic.  Returns ``(h, lengths)``.
    """
    ids, lengths = pad_ids(params, sentences)
    B, n = ids.shape
    live = np.arange(n)[None, :] < lengths[:, None]
    train = mode == "train"
    if train:
        if rng is None:
            raise ValueError("train mode needs an rng")
        if params.p_mask > 0:
            masked = (rng.random(ids.shape) < params.p_mask) & live
            ids = np.where(masked, params.vocab.mask_id, ids)
    elif mode != "eval":
        raise ValueError(f"unknown mode {mode!r}")

    x = params["tok_emb"][ids] + params["pos_emb"][np.arange(n)]
    x = x * live[..., None].astype(np.float64)
    prev, nxt = _shift_matrices(n)
    pre = (G.matmul(x, params["mix_w"])
           + G.matmul(G.einsum("ij,bjd->bid", prev, x), params["mix_prev"])
           + G.matmul(G.einsum("ij,bjd->bid", nxt, x), params["mix_next"])
           + params["mix_b"])
    h = G.tanh(pre)
    if train and params.p_drop > 0:
        keep = rng.random(h.shape) >= params.p_drop
        h = h * (keep / (1.0 - params.p_drop))
    return h, lengths


def hash_scores(params, h, lengths):
    """Per-bit +1 scores ``(W^Q_k h_l)·(W^K_k h_{r-1}) / √d_k`` for every span.

    Boundary states are those of the first and last token of the span, so a
    width-1 span pairs a token with itself.
    """
    B, n, _ = h.shape
    q = G.einsum("bnd,ked->bnke", h, params["w_query"])
    k = G.einsum("bnd,ked->bnke", h, params["w_key"])
    s = G.einsum("bike,bjke->bijk", q, k) / math.sqrt(params.dk)
    # token-indexed (first, last) -> fencepost (l, r) = (first, last + 1)
    first = np.arange(n)[:, None]
    last = np.arange(n)[None, :]
    g = G.scatter(s, (slice(None), first, last + 1), (B, n + 1, n + 1, params.K))
    # zero the reversed and padded cells so a sentence's chart is batch-independent
    live = valid_cells(lengths, n)[..., None].astype(np.float64)
    return ScoreChart(g * live, lengths)


def score_sentences(params, sentences, mode="eval", rng=None):
    h, lengths = encode(params, sentences, mode, rng)
    return hash_scores(params, h, lengths)
