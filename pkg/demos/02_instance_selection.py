"""The six contrastive losses on one hand-made similarity row.

Instance 0 is labeled "a".  Candidates 2 and 3 share its label; 1 and 4 do
not.  The negative pool is either every candidate (N∪P) or the other-label
candidates plus 0's own twin (N∪S).  The positive term is the twin, the mean
over same-label candidates, or their logsumexp.
"""
import numpy as np

from bitcky import contrastive as L
from bitcky import grad as G

labels = ["a", "b", "a", "a", "c"]
sims = np.array([0.55, 0.40, 0.90, 0.30, 0.20])

for name, strat in L.STRATEGIES.items():
    neg, pos = L.select_instances(0, labels, name)
    val = L.loss(0, sims, labels, name).item()
    print(f"{name:9s} neg={strat.negatives} pos={strat.positives:6s} "
          f"N={neg.tolist()} P={pos.tolist()} loss={val:+.4f}")

# %% which candidate does each loss pull toward?
# gradient of the loss w.r.t. the similarities: negative entries are pulled up
for name in ("sup", "max"):
    s = G.param(sims)
    g = G.backward(L.loss(0, s, labels, name))[s]
    print(f"{name:4s} dL/ds =", np.round(g, 3))
# under mean-P the far positive (0.30) gets the strongest pull, dragging the
# instance toward the middle of its class; under max-P the nearest positive
# (0.90) gets the strongest pull.

# %% with P = S the max and hash losses coincide
uniq = ["a", "b", "c", "d", "e"]
print("L_max - L_hash with unique labels:",
      L.loss(0, sims, uniq, "max").item() - L.loss(0, sims, uniq, "hash").item())

# %% a sharper temperature magnifies the gaps between similarities
for t in (1.0, 0.1, 0.02):
    print(f"t={t:<5} L_max={L.loss(0, sims, labels, 'max', temperature=t).item():+.4f}")
