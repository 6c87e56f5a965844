"""Bit-level CKY over span charts.

Charts use fencepost indexing: cell ``[l, r]`` is the span covering tokens
``l .. r-1``, so a sentence of ``n`` tokens uses cells ``0 <= l < r <= n`` of an
``(n+1, n+1)`` grid.  Every array carries a leading batch axis; sentences
shorter than the batch maximum are padded, and cells outside ``[0, n_b]`` are
masked.

Each bit ``k`` of a span's code contributes ``g_k`` when set to +1 and 0 when
set to -1.  Summing over all ``2^K`` codes of a span therefore factorizes into
the bit factor ``b(l, r) = Σ_k softplus(g_k)``, and the chart reduces to an
ordinary unlabeled CKY over ``b``.  The bit marginals follow in closed form
from the span marginals, ``μ_k(+1) = μ(l, r) σ(g_k)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import grad as G

NEG = -1e30  # log-weight standing in for an impossible cell


class MarginalOutOfRange(ArithmeticError):
    pass


class TooLarge(ValueError):
    pass


@dataclass
class ScoreChart:
    """Per-span, per-bit +1 scores ``g[b, l, r, k]``; the -1 score is 0."""

    g: G.Var
    lengths: np.ndarray

    def __post_init__(self):
        if not isinstance(self.g, G.Var):
            self.g = G.const(self.g)
        if self.g.ndim == 3:
            self.g = G.reshape(self.g, (1,) + self.g.shape)
        self.lengths = np.asarray(self.lengths, dtype=np.int64).reshape(-1)
        if self.g.ndim != 4 or self.g.shape[1] != self.g.shape[2]:
            raise ValueError(f"score chart must be (B, N+1, N+1, K), got {self.g.shape}")
        if len(self.lengths) != self.g.shape[0]:
            raise ValueError("one length per batch entry required")
        if self.lengths.min() < 1 or self.lengths.max() > self.n:
            raise ValueError("lengths must lie in [1, N]")

    @classmethod
    def single(cls, g):
        """Chart for one sentence from an ``(n+1, n+1, K)`` array or Var."""
        n = (g.shape[0] if not isinstance(g, G.Var) else g.shape[0]) - 1
        return cls(g, np.array([n]))

    @property
    def n(self):
        return self.g.shape[1] - 1

    @property
    def K(self):
        return self.g.shape[3]

    @property
    def batch(self):
        return self.g.shape[0]


@dataclass
class InsideChart:
    I: G.Var  # (B, N+1, N+1), log inside score per cell
    log_z: G.Var  # (B,)
    b: G.Var  # (B, N+1, N+1), bit factor per cell
    lengths: np.ndarray


@dataclass
class MarginalChart:
    span: G.Var  # (B, N+1, N+1)
    pos: G.Var  # (B, N+1, N+1, K), μ_k(l, r, +1)
    neg: G.Var  # (B, N+1, N+1, K), μ_k(l, r, -1)


@dataclass
class CodedTree:
    """Decoded spans in pre-order, each ``(l, r, code)`` with code in {-1,+1}^K."""

    spans: list
    score: float

    def __len__(self):
        return len(self.spans)


def valid_cells(lengths, n):
    """Boolean ``(B, N+1, N+1)`` mask of the cells each sentence actually has."""
    idx = np.arange(n + 1)
    lo, hi = idx[:, None], idx[None, :]
    lengths = np.asarray(lengths)[:, None, None]
    return (lo < hi) & (hi <= lengths)


def bit_factor(sc, l=None, r=None):
    """``b(l, r) = Σ_k softplus(g_k(l, r))``; the whole grid when no span is given."""
    b = G.sum(G.softplus(sc.g), axis=-1)
    if l is None:
        return b
    return b[0, l, r] if sc.batch == 1 else b[:, l, r]


@lru_cache(maxsize=None)
def _inside_index(n, w):
    left = np.arange(n - w + 1)[:, None]
    mid = left + np.arange(1, w)[None, :]
    return left, mid, left + w


@lru_cache(maxsize=None)
def _outside_index(n, w):
    """Parents and siblings of every width-``w`` cell, ``n - w`` of each per cell."""
    rows_p, rows_s = [], []
    for l in range(n - w + 1):
        r = l + w
        parents, siblings = [], []
        for rr in range(r + 1, n + 1):
            parents.append((l, rr))
            siblings.append((r, rr))
        for ll in range(l):
            parents.append((ll, r))
            siblings.append((ll, l))
        rows_p.append(parents)
        rows_s.append(siblings)
    p = np.array(rows_p, dtype=np.int64).reshape(n - w + 1, n - w, 2)
    s = np.array(rows_s, dtype=np.int64).reshape(n - w + 1, n - w, 2)
    return p[..., 0], p[..., 1], s[..., 0], s[..., 1]


def inside(sc):
    """Log inside scores ``I(l, r) = b(l, r) + logsumexp_m I(l, m) + I(m, r)``.

    Width-1 cells are the base case ``I(l, l+1) = b(l, l+1)``.  Runs
    diagonal by diagonal, vectorized over the batch and over cells of a width.
    """
    B, n = sc.batch, sc.n
    shape = (B, n + 1, n + 1)
    b = bit_factor(sc)
    leaves = np.arange(n)
    I = G.scatter(b[:, leaves, leaves + 1], (slice(None), leaves, leaves + 1), shape)
    for w in range(2, n + 1):
        left, mid, right = _inside_index(n, w)
        splits = I[:, left, mid] + I[:, mid, right]
        cells = (slice(None), left[:, 0], right[:, 0])
        val = G.logsumexp(splits, axis=-1) + b[cells]
        I = I + G.scatter(val, cells, shape)
    log_z = I[np.arange(B), 0, sc.lengths]
    return InsideChart(I=I, log_z=log_z, b=b, lengths=sc.lengths)


def outside(ic, sc=None):
    """Log outside scores, computed top-down as an explicit recursion.

    ``O(l, r) = logsumexp`` over every parent ``p`` of ``[l, r)`` of
    ``O(p) + b(p) + I(sibling)``, with ``O(0, n) = 0``.  Because this is a
    forward computation (not a derivative of log Z), marginals built from it
    stay first-order differentiable.
    """
    B, n = ic.I.shape[0], ic.I.shape[1] - 1
    shape = (B, n + 1, n + 1)
    lengths = ic.lengths
    O = G.const(np.zeros(shape))
    for w in range(n, 0, -1):
        starts = np.arange(n - w + 1)
        cells = (slice(None), starts, starts + w)
        valid = (starts[None, :] + w) <= lengths[:, None]
        root = (starts[None, :] == 0) & (lengths[:, None] == w)
        if w == n:
            raw = G.const(np.full((B, 1), NEG))
        else:
            pl, pr, sl, sr = _outside_index(n, w)
            terms = O[:, pl, pr] + ic.b[:, pl, pr] + ic.I[:, sl, sr]
            raw = G.logsumexp(terms, axis=-1)
        val = G.where(root, 0.0, G.where(valid, raw, NEG))
        O = O + G.scatter(val, cells, shape)
    return O


def span_marginals(ic, oc, check=True):
    """``μ(l, r) = exp(I + O - log Z)``; zero on cells a sentence lacks."""
    n = ic.I.shape[1] - 1
    mask = valid_cells(ic.lengths, n)
    z = G.reshape(ic.log_z, (-1, 1, 1))
    logit = G.where(mask, ic.I + oc - z, NEG)
    mu = G.where(mask, G.exp(logit), 0.0)
    if check:
        v = mu.value
        if v.min() < -1e-9 or v.max() > 1 + 1e-9:
            raise MarginalOutOfRange(f"span marginal outside [0, 1]: {v.min()}, {v.max()}")
    return mu


def bit_marginals(mu, sc):
    """Closed-form bit marginals ``μ σ(g_k)`` and ``μ σ(-g_k)``."""
    m = G.reshape(mu, mu.shape + (1,))
    return MarginalChart(span=mu, pos=m * G.sigmoid(sc.g), neg=m * G.sigmoid(-sc.g))


def marginals(sc):
    """Inside, outside, span and bit marginals in one call."""
    ic = inside(sc)
    oc = outside(ic, sc)
    mc = bit_marginals(span_marginals(ic, oc), sc)
    return ic, mc


# -- decoding ------------------------------------------------------------------


def _scores_array(sc):
    if isinstance(sc, ScoreChart):
        return sc.g.value, sc.lengths
    g = np.asarray(sc, dtype=np.float64)
    if g.ndim == 3:
        g = g[None]
    return g, np.full(g.shape[0], g.shape[1] - 1)


def _decode_one(g, n):
    """Max-score CKY over per-span best-code values; ties go to the smallest split."""
    value = np.maximum(g, 0.0).sum(axis=-1)
    best = np.zeros((n + 1, n + 1))
    split = np.zeros((n + 1, n + 1), dtype=np.int64)
    for l in range(n):
        best[l, l + 1] = value[l, l + 1]
    for w in range(2, n + 1):
        for l in range(n - w + 1):
            r = l + w
            cand = [best[l, m] + best[m, r] for m in range(l + 1, r)]
            j = int(np.argmax(cand))  # first maximum
            split[l, r] = l + 1 + j
            best[l, r] = value[l, r] + cand[j]
    spans = []
    stack = [(0, n)]
    while stack:
        l, r = stack.pop()
        code = tuple(1 if x > 0 else -1 for x in g[l, r])
        spans.append((l, r, code))
        if r - l > 1:
            m = int(split[l, r])
            stack.append((m, r))
            stack.append((l, m))
    return CodedTree(spans=spans, score=float(best[0, n]))


def viterbi_decode(sc):
    """Best (tree, code) pair; bit ties (g = 0) resolve to -1.

    Returns a :class:`CodedTree` for a single-sentence chart, a list otherwise.
    """
    g, lengths = _scores_array(sc)
    out = [_decode_one(g[i, : n + 1, : n + 1], int(n)) for i, n in enumerate(lengths)]
    return out[0] if len(out) == 1 else out


def tree_score(g, spans):
    """Σ over spans of Σ_k g_k(l, r, c_k) with the -1 score fixed at 0."""
    g = np.asarray(g)
    total = 0.0
    for l, r, code in spans:
        total += sum(float(g[l, r, k]) for k, c in enumerate(code) if c > 0)
    return total


# -- brute-force oracle --------------------------------------------------------


def catalan(m):
    return math.comb(2 * m, m) // (m + 1)


def all_trees(l, r):
    """Every binary bracketing of ``[l, r)`` as a tuple of spans (pre-order)."""
    if r - l == 1:
        return [((l, r),)]
    out = []
    for m in range(l + 1, r):
        for left in all_trees(l, m):
            for right in all_trees(m, r):
                out.append(((l, r),) + left + right)
    return out


@dataclass
class OracleResult:
    log_z: float
    span: np.ndarray  # (n+1, n+1)
    pos: np.ndarray  # (n+1, n+1, K)
    neg: np.ndarray
    best_score: float
    best_spans: list
    n_trees: int


def _lse(xs):
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def enumerate_oracle(sc, full_codes=False):
    """Exact enumeration over trees (and optionally over all code assignments).

    By default each tree's weight uses the per-span closed-form sum over codes
    ``Π_k (1 + e^{g_k})``.  With ``full_codes=True`` every code assignment of
    every tree is enumerated explicitly, which is only feasible for tiny charts.
    """
    g, lengths = _scores_array(sc)
    if g.shape[0] != 1:
        raise ValueError("oracle takes a single-sentence chart")
    n, K = int(lengths[0]), g.shape[-1]
    g = g[0, : n + 1, : n + 1]
    if n > 6 or K > 4:
        raise TooLarge(f"oracle limited to n <= 6 and K <= 4 (got n={n}, K={K})")
    if full_codes and (2 * n - 1) * K > 16:
        raise TooLarge("full code enumeration limited to (2n-1)K <= 16")
    trees = all_trees(0, n)
    codes = list(itertools.product((-1, 1), repeat=K))

    weights = []  # (log weight, tree, per-span code or None)
    for spans in trees:
        if full_codes:
            for assignment in itertools.product(codes, repeat=len(spans)):
                lw = sum(g[l, r, k] for (l, r), c in zip(spans, assignment)
                         for k in range(K) if c[k] > 0)
                weights.append((lw, spans, assignment))
        else:
            lw = sum(math.log1p(math.exp(g[l, r, k])) if g[l, r, k] < 30
                     else g[l, r, k] + math.log1p(math.exp(-g[l, r, k]))
                     for (l, r) in spans for k in range(K))
            weights.append((lw, spans, None))
    log_z = _lse([w[0] for w in weights])

    span = np.zeros((n + 1, n + 1))
    pos = np.zeros((n + 1, n + 1, K))
    for lw, spans, assignment in weights:
        p = math.exp(lw - log_z)
        for i, (l, r) in enumerate(spans):
            span[l, r] += p
            if assignment is None:
                pos[l, r] += p / (1.0 + np.exp(-g[l, r]))
            else:
                pos[l, r] += p * (np.array(assignment[i]) > 0)
    neg = span[..., None] - pos

    best_score, best_spans = -math.inf, None
    for spans in trees:
        score = sum(max(g[l, r, k], 0.0) for (l, r) in spans for k in range(K))
        if score > best_score:
            best_score, best_spans = score, spans
    best_coded = [(l, r, tuple(1 if x > 0 else -1 for x in g[l, r])) for l, r in best_spans]
    return OracleResult(log_z=log_z, span=span, pos=pos, neg=neg, best_score=best_score,
                        best_spans=best_coded, n_trees=len(trees))
