"""A bit-level chart, worked through on tiny sentences.

Every span (l, r) gets K per-bit scores g_k; bit value -1 scores 0.  Summing
over both values of every bit gives the span factor b = sum_k softplus(g_k),
and the usual CKY inside pass over those factors yields log Z over all
(tree, code) pairs.
"""
import math

import numpy as np

from bitcky import chart as C
from bitcky import grad as G

np.set_printoptions(precision=4, suppress=True)

# %% all-zero scores on 3 tokens, one bit
# two binary trees, 5 spans each, 2^5 code assignments per tree -> Z = 64
sc = C.ScoreChart.single(np.zeros((4, 4, 1)))
ic = C.inside(sc)
print("log Z =", ic.log_z.value[0], " ln 64 =", math.log(64))

# the two middle spans each appear in one of the two trees
_, mc = C.marginals(sc)
print("span marginals:\n", mc.span.value[0])

# %% one informative cell
# g(0,2) = ln 3 makes bit +1 three times as likely as -1 on span (0,2)
g = np.zeros((3, 3, 1))
g[0, 2, 0] = math.log(3)
_, mc = C.marginals(C.ScoreChart.single(g))
print("mu(0,2,+1) =", mc.pos.value[0, 0, 2, 0], " mu(0,2,-1) =", mc.neg.value[0, 0, 2, 0])

# %% marginals are the gradient of log Z
rng = np.random.default_rng(0)
gv = G.param(rng.normal(size=(5, 5, 2)))
ic, mc = C.marginals(C.ScoreChart.single(gv))
grad = G.backward(G.sum(ic.log_z))[gv]
cells = C.valid_cells([4], 4)[0]
print("max |dlogZ/dg - mu(+1)| =", np.abs(grad[cells] - mc.pos.value[0][cells]).max())

# %% compare with brute force
oracle = C.enumerate_oracle(gv.value)
print("trees enumerated:", oracle.n_trees)
print("log Z chart vs oracle:", ic.log_z.value[0], oracle.log_z)
print("max span marginal deviation:", np.abs(mc.span.value[0] - oracle.span).max())

# %% decoding
# best tree under sum_k max(g_k, 0); each bit is +1 iff its score is positive
tree = C.viterbi_decode(gv.value)
for l, r, code in tree.spans:
    print(f"  [{l},{r})  code {''.join('1' if c > 0 else '0' for c in code)}")
print("score", tree.score, " brute force", oracle.best_score)
