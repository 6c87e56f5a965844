"""Batching, learning-rate schedule, AdamW, the training loop and checkpoints."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import chart as C
from . import codebook as CB
from . import grad as G
from .contrastive import EmptyNegativeSet, TargetSpans, batch_loss, get_strategy
from .encoder import PARAM_NAMES, EncoderParams, Vocab, init_params, score_sentences
from .evalmetrics import labeled_f1, ner_f1
from .treebank import from_cnf, ner_to_partial_tree, node, spans_of, to_cnf, Tree

log = logging.getLogger(__name__)

CKPT_MAGIC = "bitcky-checkpoint"
CKPT_VERSION = 1

# named rng sub-streams, all derived from the run seed
STREAM_BATCH, STREAM_VIEW = 1, 2


class SentenceExceedsBudget(ValueError):
    pass


@dataclass
class TrainConfig:
    task: str = "parse"  # "parse" | "ner"
    K: int = 12
    d: int = 64
    max_len: int = 64
    p_drop: float = 0.1
    p_mask: float = 0.15
    steps: int = 3000
    warmup: int = 300
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    token_budget: int = 1024
    seed: int = 0
    loss: str = "max"
    temperature: float = 1.0
    checkpoint_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.task not in ("parse", "ner"):
            raise ValueError(f"unknown task {self.task!r}")
        if not 0 <= self.warmup < self.steps:
            raise ValueError("need 0 <= warmup < steps")
        get_strategy(self.loss)

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))

    def hash(self):
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Example:
    tokens: list
    tree: Tree  # binarized target tree
    gold: object = None  # original Tree or EntityAnnotation


def make_examples(corpus, task):
    """Wrap raw trees (``parse``) or entity annotations (``ner``) as training examples."""
    out = []
    for item in corpus:
        if task == "parse":
            out.append(Example(item.leaves(), to_cnf(item), item))
        else:
            out.append(Example(list(item.tokens), ner_to_partial_tree(item), item))
    return out


# -- batching and schedule -----------------------------------------------------


def make_batches(lengths, token_budget, seed, shuffle=True):
    """Greedy token-budget batches of sentence indices.

    Sentences are shuffled by ``seed`` and appended to the current batch until
    the next one would push it past ``token_budget``.
    """
    lengths = list(lengths)
    if not lengths:
        raise ValueError("empty corpus")
    if max(lengths) > token_budget:
        raise SentenceExceedsBudget(f"sentence of {max(lengths)} tokens exceeds budget {token_budget}")
    order = np.arange(len(lengths))
    if shuffle:
        key = list(seed) if isinstance(seed, (tuple, list)) else [seed]
        order = np.random.default_rng(key + [STREAM_BATCH]).permutation(len(lengths))
    batches, cur, used = [], [], 0
    for i in order:
        n = lengths[i]
        if cur and used + n > token_budget:
            batches.append(cur)
            cur, used = [], 0
        cur.append(int(i))
        used += n
    if cur:
        batches.append(cur)
    return batches


class BatchStream:
    """Batch for any global step; epoch ``e`` reshuffles with seed ``(seed, e)``."""

    def __init__(self, lengths, token_budget, seed):
        self.lengths = list(lengths)
        self.budget = token_budget
        self.seed = seed
        self._epochs = []
        self._starts = [0]

    def _epoch(self, e):
        while len(self._epochs) <= e:
            k = len(self._epochs)
            self._epochs.append(make_batches(self.lengths, self.budget, (self.seed, k)))
            self._starts.append(self._starts[-1] + len(self._epochs[-1]))
        return self._epochs[e]

    def __getitem__(self, step):
        e = 0
        while True:
            batches = self._epoch(e)
            if step < self._starts[e + 1]:
                return batches[step - self._starts[e]]
            e += 1


def lr_schedule(step, cfg):
    """Linear warmup to ``cfg.lr``, then linear decay to 0 at ``cfg.steps``."""
    if cfg.warmup > 0 and step <= cfg.warmup:
        return cfg.lr * step / cfg.warmup
    return cfg.lr * max(0.0, (cfg.steps - step) / (cfg.steps - cfg.warmup))


# -- optimizer -----------------------------------------------------------------


@dataclass
class AdamW:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads, lr):
        """One update in place; ``params`` and ``grads`` map names to arrays."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= lr * (update + self.weight_decay * p)


def clip_grads(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


# -- model forward -------------------------------------------------------------


def view_rng(seed, step, view):
    return np.random.default_rng([seed, STREAM_VIEW, step, view])


def compute_loss(params, examples, cfg, step):
    """Two-view structured contrastive loss for one batch."""
    sents = [ex.tokens for ex in examples]
    targets = TargetSpans.from_trees([spans_of(ex.tree) for ex in examples])
    margs = []
    for view in (1, 2):
        sc = score_sentences(params, sents, "train", view_rng(cfg.seed, step, view))
        _, mc = C.marginals(sc)
        margs.append(mc)
    return batch_loss(margs[0], margs[1], targets, cfg.loss, cfg.temperature)


@dataclass
class Checkpoint:
    config: TrainConfig
    params: EncoderParams
    optimizer: AdamW
    step: int
    losses: list = field(default_factory=list)

    def to_json(self):
        def arrays(d):
            return {k: {"shape": list(np.shape(v)), "data": np.asarray(v).ravel().tolist()}
                    for k, v in d.items()}
        return {
            "magic": CKPT_MAGIC,
            "version": CKPT_VERSION,
            "config_hash": self.config.hash(),
            "config": self.config.to_json(),
            "step": self.step,
            "rng": {"seed": self.config.seed, "streams": {"batch": STREAM_BATCH, "view": STREAM_VIEW}},
            "vocab": self.params.vocab.itos,
            "params": arrays({k: v.value for k, v in self.params.tensors.items()}),
            "adam": {"t": self.optimizer.t, "m": arrays(self.optimizer.m), "v": arrays(self.optimizer.v)},
            "losses": self.losses,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def from_json(cls, data):
        if data.get("magic") != CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        if data.get("version") != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        cfg = TrainConfig.from_json(data["config"])
        if cfg.hash() != data["config_hash"]:
            raise ValueError("config hash mismatch")

        def arrays(d):
            return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d.items()}

        itos = data["vocab"]
        vocab = Vocab(itos[2:])
        tensors = {k: G.param(v, name=k) for k, v in arrays(data["params"]).items()}
        params = EncoderParams(vocab, cfg.d, cfg.K, cfg.max_len, cfg.p_drop, cfg.p_mask, tensors)
        opt = AdamW(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, t=data["adam"]["t"],
                    m=arrays(data["adam"]["m"]), v=arrays(data["adam"]["v"]))
        return cls(cfg, params, opt, int(data["step"]), list(data.get("losses", [])))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def new_model(cfg, examples):
    vocab = Vocab.from_corpus(ex.tokens for ex in examples)
    return init_params(vocab, d=cfg.d, K=cfg.K, seed=cfg.seed, max_len=cfg.max_len,
                       p_drop=cfg.p_drop, p_mask=cfg.p_mask)


def train(cfg, examples, out_dir=None, resume=None, stop_at=None, log_file=None):
    """Run (or continue) training; returns the final :class:`Checkpoint`.

    ``resume`` continues from a checkpoint bit-identically; ``stop_at`` ends
    early at that step (used to produce intermediate checkpoints).
    """
    if resume is None:
        params = new_model(cfg, examples)
        opt = AdamW(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
        ckpt = Checkpoint(cfg, params, opt, 0)
    else:
        ckpt = resume
        if ckpt.config.hash() != cfg.hash():
            raise ValueError("checkpoint was trained with a different config")
    params, opt = ckpt.params, ckpt.optimizer
    stream = BatchStream([len(ex.tokens) for ex in examples], cfg.token_budget, cfg.seed)
    names = list(PARAM_NAMES)
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    out_log = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        out_log = open(log_file or os.path.join(out_dir, "train.tsv"),
                       "a" if resume is not None else "w", encoding="utf-8")
        if resume is None:
            out_log.write("step\tlr\tloss\n")
    try:
        for step in range(ckpt.step, end):
            batch = [examples[i] for i in stream[step]]
            lr = lr_schedule(step + 1, cfg)
            try:
                loss = compute_loss(params, batch, cfg, step)
            except EmptyNegativeSet:
                log.warning("step %d: degenerate batch skipped", step)
                ckpt.losses.append(None)
                ckpt.step = step + 1
                continue
            grads = G.backward(loss)
            grads, _ = clip_grads({k: grads[params[k]] for k in names}, cfg.clip_norm)
            opt.step({k: params[k].value for k in names}, grads, lr)
            ckpt.losses.append(loss.item())
            ckpt.step = step + 1
            if out_log is not None:
                out_log.write(f"{step + 1}\t{lr!r}\t{loss.item()!r}\n")
            if cfg.log_every and (step + 1) % cfg.log_every == 0:
                log.info("step %d lr %.3g loss %.5f", step + 1, lr, loss.item())
            if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                ckpt.save(os.path.join(out_dir, f"step{step + 1}.ckpt.json"))
    finally:
        if out_log is not None:
            out_log.close()
    if out_dir is not None:
        ckpt.save(os.path.join(out_dir, "final.ckpt.json"))
        params.vocab.save(os.path.join(out_dir, "vocab.txt"))
    return ckpt


# -- inference -----------------------------------------------------------------


def coded_to_tree(coded, tokens, label_of):
    """Turn decoded ``(l, r, code)`` spans (pre-order) into a labeled binary tree."""
    spans = iter(coded.spans)

    def build():
        l, r, code = next(spans)
        label = label_of(code)
        if r - l == 1:
            return Tree(label, (tokens[l],), l, r)
        left = build()
        right = build()
        return Tree(label, (left, right), l, r)

    return build()


def decode(params, sentences, batch_size=64):
    """Viterbi-decoded coded trees for each sentence (eval mode)."""
    out = []
    for start in range(0, len(sentences), batch_size):
        sc = score_sentences(params, sentences[start:start + batch_size], mode="eval")
        res = C.viterbi_decode(sc)
        out.extend(res if isinstance(res, list) else [res])
    return out


def predict(params, codebook, sentences, batch_size=64):
    """Decoded binary trees with codes translated to labels."""
    coded = decode(params, sentences, batch_size)
    return [coded_to_tree(c, s, codebook.translate) for c, s in zip(coded, sentences)]


def evaluate(params, codebook, examples, task):
    sents = [ex.tokens for ex in examples]
    pred = predict(params, codebook, sents)
    if task == "parse":
        return labeled_f1([ex.gold for ex in examples], [from_cnf(t) for t in pred])
    return ner_f1([ex.gold for ex in examples], pred)


def build_codebook(params, examples):
    return CB.build(params, [ex.tokens for ex in examples], [ex.tree for ex in examples])
