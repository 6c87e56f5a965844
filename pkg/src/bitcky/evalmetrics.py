"""Labeled bracketing F1 and exact-match entity F1."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .treebank import NULL, TOP, entities_of

# strings never scored as entities: the filler label, the dummy root, and
# anything primed or joined is split/filtered by ``entities_of``
NER_SCAFFOLD = (NULL, TOP)


class LengthMismatch(ValueError):
    pass


@dataclass
class F1Report:
    matched: int
    gold: int
    predicted: int

    @property
    def precision(self):
        return self.matched / self.predicted if self.predicted else 0.0

    @property
    def recall(self):
        return self.matched / self.gold if self.gold else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other):
        return F1Report(self.matched + other.matched, self.gold + other.gold,
                        self.predicted + other.predicted)

    def tsv(self):
        return ("precision\trecall\tf1\tmatched\tgold\tpredicted\n"
                f"{self.precision:.6f}\t{self.recall:.6f}\t{self.f1:.6f}\t"
                f"{self.matched}\t{self.gold}\t{self.predicted}\n")

    def summary(self, name="F1"):
        return (f"{name}: P={100 * self.precision:.2f} R={100 * self.recall:.2f} "
                f"F1={100 * self.f1:.2f} ({self.matched} matched / {self.gold} gold / "
                f"{self.predicted} predicted)")


def brackets(tree, include_preterminals=False, ignore=(TOP,)):
    """Multiset of ``(l, r, label)`` for the constituents of an n-ary tree."""
    out = Counter()
    for s in tree.subtrees():
        if s.is_preterminal and not include_preterminals:
            continue
        if s.label in ignore:
            continue
        out[(s.l, s.r, s.label)] += 1
    return out


def _score(gold_sets, pred_sets):
    matched = gold = pred = 0
    for g, p in zip(gold_sets, pred_sets):
        matched += sum((g & p).values())
        gold += sum(g.values())
        pred += sum(p.values())
    return F1Report(matched, gold, pred)


def labeled_f1(gold, pred, include_preterminals=False):
    """Bracketing F1 over de-binarized trees; pre-terminals and TOP excluded by default."""
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold vs {len(pred)} predicted trees")
    for g, p in zip(gold, pred):
        if len(g) != len(p):
            raise LengthMismatch(f"sentence lengths differ: {len(g)} vs {len(p)}")
    return _score([brackets(t, include_preterminals) for t in gold],
                  [brackets(t, include_preterminals) for t in pred])


def ner_f1(gold, pred):
    """Exact ``(l, r, label)`` entity F1; ``pred`` are decoded, translated NER trees."""
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold vs {len(pred)} predicted sentences")
    gold_sets, pred_sets = [], []
    for ann, t in zip(gold, pred):
        if len(ann.tokens) != len(t):
            raise LengthMismatch(f"sentence lengths differ: {len(ann.tokens)} vs {len(t)}")
        gold_sets.append(Counter((s.l, s.r, s.label) for s in ann.entities))
        pred_sets.append(Counter((s.l, s.r, s.label) for s in entities_of(t, NER_SCAFFOLD)))
    return _score(gold_sets, pred_sets)
