"""Train a 6-bit parser on the synthetic treebank, then read its codes.

This is a shortened version of the acceptance run (600 steps instead of
3000, about half a minute on one core).  Pass a larger step count as the
first argument to get closer to the full result.
"""
import sys

from bitcky import codebook as CB
from bitcky import synthdata as S
from bitcky import trainer as T
from bitcky.treebank import from_cnf, label_counts, to_bracketed

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600

# %% data
trees = S.gen_parse_corpus(count=1200, seed=1)
raw, cnf = label_counts(trees)
print(f"{len(trees)} trees; {raw} phrase labels before CNF, {cnf} after")
print("example:", to_bracketed(trees[0]))
examples = T.make_examples(trees, "parse")
train, test = examples[:1000], examples[1000:]

# %% training
cfg = T.TrainConfig.load("configs/synth_parse.json")
cfg = T.TrainConfig.from_json({**cfg.to_json(), "steps": steps, "warmup": min(200, steps // 5),
                                "log_every": max(steps // 6, 1)})
ckpt = T.train(cfg, train)

# %% codebook: count (code, gold label) on the training set in eval mode
cb = T.build_codebook(ckpt.params, train)
print(f"{len(cb)} distinct codes for {len(cb.labels())} labels")
for label, code, cov in cb.coverage_report():
    print(f"  {label:10s} {CB.code_to_bits(code)} ({CB.code_to_hex(code)})  {100 * cov:6.2f}%")

# %% held-out F1 and a decoded sentence
print(T.evaluate(ckpt.params, cb, test, "parse").summary())
sent = test[0].tokens
coded = T.decode(ckpt.params, [sent])[0]
print("codes:", to_bracketed(T.coded_to_tree(coded, sent, CB.code_to_hex)))
print("tree: ", to_bracketed(from_cnf(T.coded_to_tree(coded, sent, cb.translate))))
print("gold: ", to_bracketed(test[0].gold))
