"""Command-line interface: ``python -m bitcky <command> ...``.

Exit codes: 0 ok, 1 usage/input error, 2 numerical abort, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import chart as C
from . import codebook as CB
from . import grad as G
from . import synthdata
from . import trainer as T
from .contrastive import STRATEGIES, TargetSpans, batch_loss
from .encoder import Vocab, init_params, score_sentences
from .evalmetrics import labeled_f1, ner_f1
from .treebank import (TreeError, from_cnf, parse_bracketed, read_entities, read_trees,
                       spans_of, to_bracketed, to_cnf, write_entities, write_trees)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("bitcky")


class UsageError(Exception):
    pass


def _resolved(args, **extra):
    """Print the resolved command settings and seed to stderr."""
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    print("# resolved: " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


def _need_file(path, what):
    if path is None or not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _load_corpus(path, task):
    _need_file(path, "corpus")
    try:
        return read_trees(path) if task == "parse" else read_entities(path)
    except (TreeError, ValueError, KeyError) as e:
        raise UsageError(f"cannot read {path}: {e}") from e


def _read_tokens(path):
    _need_file(path, "input")
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f if line.strip()]


def _load_model(path):
    _need_file(path, "model")
    try:
        return T.Checkpoint.load(path)
    except (ValueError, KeyError) as e:
        raise UsageError(f"cannot load checkpoint {path}: {e}") from e


def _load_codebook(path, K):
    _need_file(path, "codebook")
    cb = CB.Codebook.load(path)
    widths = {len(c) for c in cb.table}
    if widths and widths != {K}:
        raise UsageError(f"codebook codes have {sorted(widths)} bits, model has K={K}")
    return cb


# -- commands ------------------------------------------------------------------


def cmd_train(args):
    if args.config:
        _need_file(args.config, "config")
        try:
            base = T.TrainConfig.load(args.config).to_json()
        except (ValueError, TypeError) as e:
            raise UsageError(f"bad config {args.config}: {e}") from e
    else:
        base = T.TrainConfig().to_json()
    for key in ("steps", "K", "loss", "task"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base["seed"]]
    corpus = _load_corpus(args.corpus, base["task"])
    examples = T.make_examples(corpus, base["task"])
    dev = None
    if args.dev:
        dev = T.make_examples(_load_corpus(args.dev, base["task"]), base["task"])
    scores = []
    for seed in seeds:
        try:
            cfg = T.TrainConfig.from_json({**base, "seed": seed})
        except (ValueError, TypeError) as e:
            raise UsageError(str(e)) from e
        _resolved(args, config=cfg.to_json(), seed=seed)
        out = os.path.join(args.out, f"seed{seed}") if len(seeds) > 1 else args.out
        try:
            ck = T.train(cfg, examples, out_dir=out)
        except T.SentenceExceedsBudget as e:
            raise UsageError(str(e)) from e
        cb = T.build_codebook(ck.params, examples)
        cb.save(os.path.join(out, "codebook.json"))
        print(f"seed {seed}: {ck.step} steps, final loss {ck.losses[-1]}, {len(cb)} codes -> {out}")
        if dev is not None:
            rep = T.evaluate(ck.params, cb, dev, cfg.task)
            scores.append(rep.f1)
            print(f"seed {seed}: dev {rep.summary()}")
    if scores:
        print(f"mean dev F1 over {len(scores)} seed(s): {100 * float(np.mean(scores)):.2f}")
    return EXIT_OK


def cmd_parse(args):
    _resolved(args)
    ck = _load_model(args.model)
    cb = _load_codebook(args.codebook, ck.config.K)
    sents = _read_tokens(args.input)
    if not sents:
        return EXIT_OK
    too_long = [len(s) for s in sents if len(s) > ck.params.max_len]
    if too_long:
        raise UsageError(f"sentence of {too_long[0]} tokens exceeds max_len={ck.params.max_len}")
    coded = T.decode(ck.params, sents)
    for c, sent in zip(coded, sents):
        if args.emit_codes:
            tree = T.coded_to_tree(c, sent, CB.code_to_hex)
            print(to_bracketed(tree))
        else:
            tree = T.coded_to_tree(c, sent, cb.translate)
            print(to_bracketed(from_cnf(tree) if ck.config.task == "parse" else tree))
    if cb.fallbacks:
        print(f"# {cb.fallbacks} unseen code(s) translated by nearest neighbour", file=sys.stderr)
    return EXIT_OK


def cmd_codebook(args):
    _resolved(args)
    ck = _load_model(args.model)
    examples = T.make_examples(_load_corpus(args.corpus, ck.config.task), ck.config.task)
    cb = T.build_codebook(ck.params, examples)
    cb.save(args.out)
    print(f"{len(cb)} codes over {len(cb.labels())} labels -> {args.out}")
    return EXIT_OK


def cmd_eval(args):
    _resolved(args)
    gold = _load_corpus(args.gold, args.task)
    if args.pred:
        _need_file(args.pred, "predictions")
        pred = read_trees(args.pred)
    elif args.model and args.codebook:
        ck = _load_model(args.model)
        cb = _load_codebook(args.codebook, ck.config.K)
        sents = [t.leaves() for t in gold] if args.task == "parse" else [list(a.tokens) for a in gold]
        pred = T.predict(ck.params, cb, sents)
        if args.task == "parse":
            pred = [from_cnf(t) for t in pred]
    else:
        raise UsageError("eval needs --pred, or --model with --codebook")
    try:
        if args.task == "parse":
            rep = labeled_f1(gold, pred)
            leaves = labeled_f1(gold, pred, include_preterminals=True)
        else:
            rep, leaves = ner_f1(gold, pred), None
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.task == "ner":
        print("# entities exclude labels ∅ and TOP; primed and '+'-joined labels are split")
    sys.stdout.write(rep.tsv())
    print(rep.summary("F1"))
    if leaves is not None:
        print(leaves.summary("F1 incl. pre-terminals"))
    return EXIT_OK


def cmd_oracle_check(args):
    _resolved(args)
    if not (1 <= args.n <= 6 and 1 <= args.k <= 4):
        raise UsageError("oracle-check needs 1 <= n <= 6 and 1 <= k <= 4")
    rng = np.random.default_rng(args.seed)
    d_logz = d_marg = d_dec = 0.0
    for _ in range(args.trials):
        n = int(rng.integers(min(2, args.n), args.n + 1))
        K = int(rng.integers(1, args.k + 1))
        g = rng.normal(scale=args.scale, size=(n + 1, n + 1, K))
        sc = C.ScoreChart.single(g)
        ic, mc = C.marginals(sc)
        oracle = C.enumerate_oracle(sc)
        d_logz = max(d_logz, abs(ic.log_z.value[0] - oracle.log_z))
        for got, want in ((mc.span.value[0], oracle.span), (mc.pos.value[0], oracle.pos),
                          (mc.neg.value[0], oracle.neg)):
            d_marg = max(d_marg, float(np.abs(got - want).max()))
        d_dec = max(d_dec, abs(C.viterbi_decode(sc).score - oracle.best_score))
    ok = d_logz <= args.tol and d_marg <= args.tol and d_dec <= 1e-12
    print(f"trials {args.trials}  max|dlogZ| {d_logz:.3e}  max|dmu| {d_marg:.3e}  "
          f"max|ddecode| {d_dec:.3e}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


GRADCHECK_TREES = [
    "(S (NP (DT the) (NN cat)) (VP (VB sat) (RB down)))",
    "(S (NP (DT a) (NN dog)) (VP (VB ran)))",
]


def _toy_gradcheck_problem(seed):
    trees = [to_cnf(parse_bracketed(t)) for t in GRADCHECK_TREES]
    sents = [t.leaves() for t in trees]
    params = init_params(Vocab.from_corpus(sents), d=6, K=2, seed=seed, max_len=8)
    # larger weights so marginals sit away from uniform
    for t in params.tensors.values():
        t.value *= 4.0
    return params, sents, TargetSpans.from_trees([spans_of(t) for t in trees])


def cmd_gradcheck(args):
    _resolved(args)
    params, sents, targets = _toy_gradcheck_problem(args.seed)
    rng_seed = args.seed

    def f():
        margs = []
        for view in (1, 2):
            sc = score_sentences(params, sents, "train", np.random.default_rng([rng_seed, view]))
            margs.append(C.marginals(sc)[1])
        return batch_loss(margs[0], margs[1], targets, args.loss)

    report = G.grad_check(f, params.tensors, tol=args.tol)
    for name in params.tensors:
        errs = [e.rel_error for e in report.entries if e.name == name]
        print(f"{name}\t{len(errs)} entries\tmax rel err {max(errs):.3e}")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_report_coverage(args):
    _resolved(args)
    _need_file(args.codebook, "codebook")
    cb = CB.Codebook.load(args.codebook)
    rows = cb.coverage_report(args.threshold)
    if args.out:
        CB.write_coverage_tsv(args.out, rows)
        print(f"{len(rows)} rows -> {args.out}")
    else:
        CB.write_coverage_tsv(sys.stdout, rows)
    return EXIT_OK


def cmd_gen_corpus(args):
    _resolved(args)
    if args.task == "parse":
        merge = dict(kv.split("=") for kv in args.merge.split(",")) if args.merge else {}
        grammar = synthdata.SynthGrammar(max_len=args.max_len, merge=merge, ambiguity=args.ambiguity)
        write_trees(args.out, synthdata.gen_parse_corpus(grammar, args.count, args.seed))
    else:
        grammar = synthdata.NerGrammar(max_len=args.max_len, nesting=args.nesting)
        write_entities(args.out, synthdata.gen_ner_corpus(grammar, args.count, args.seed))
    print(f"{args.count} {args.task} examples -> {args.out}")
    return EXIT_OK


# -- wiring --------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="bitcky", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a model (one run per seed)")
    s.add_argument("--config", help="JSON file mirroring TrainConfig")
    s.add_argument("--corpus", required=True, help="bracketed trees (parse) or entity JSONL (ner)")
    s.add_argument("--dev", help="held-out corpus; prints dev F1 per seed and the mean")
    s.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2")
    s.add_argument("--out", default="run")
    s.add_argument("--task", choices=["parse", "ner"])
    s.add_argument("--steps", type=int)
    s.add_argument("--K", type=int)
    s.add_argument("--loss", choices=sorted(STRATEGIES))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("parse", help="decode token lines into bracketed trees")
    s.add_argument("--model", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--input", required=True, help="one whitespace-tokenized sentence per line")
    s.add_argument("--emit-codes", action="store_true", help="label spans with hex codes instead")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("codebook", help="count (code, label) pairs over a training corpus")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", default="codebook.json")
    s.set_defaults(func=cmd_codebook)

    s = sub.add_parser("eval", help="labeled bracket F1 or entity F1")
    s.add_argument("--task", choices=["parse", "ner"], default="parse")
    s.add_argument("--gold", required=True)
    s.add_argument("--pred", help="bracketed predicted trees")
    s.add_argument("--model")
    s.add_argument("--codebook")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("oracle-check", help="chart algorithms vs brute-force enumeration")
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_oracle_check)

    s = sub.add_parser("gradcheck", help="batch loss gradients vs central differences")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--loss", choices=sorted(STRATEGIES), default="max")
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("report-coverage", help="top codes per label as TSV")
    s.add_argument("--codebook", required=True)
    s.add_argument("--threshold", type=float, default=0.9)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report_coverage)

    s = sub.add_parser("gen-corpus", help="write a synthetic corpus")
    s.add_argument("--task", choices=["parse", "ner"], default="parse")
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-len", type=int, default=12)
    s.add_argument("--merge", help="label renames, e.g. ADJP=PP")
    s.add_argument("--ambiguity", type=float, default=0.0)
    s.add_argument("--nesting", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_corpus)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage; usage errors are 1 here
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (G.NonFiniteValue, G.NonFiniteGradient) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CB.EmptyCodebook) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
