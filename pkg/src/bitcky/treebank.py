"""Trees, bracketed-corpus I/O, CNF conversion and the NER-to-tree reduction."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

PRIME = "'"
JOIN = "+"
NULL = "∅"
TOP = "TOP"


class TreeError(ValueError):
    pass


class UnbalancedBrackets(TreeError):
    pass


class EmptyTree(TreeError):
    pass


class EmptyLabel(TreeError):
    pass


class MalformedTree(TreeError):
    pass


class CrossingEntities(TreeError):
    pass


@dataclass(frozen=True)
class Tree:
    """A labeled constituent over fenceposts ``[l, r)``.

    ``children`` is either a 1-tuple holding a token string (a pre-terminal)
    or a tuple of subtrees whose spans tile ``[l, r)`` in order.
    """

    label: str
    children: tuple
    l: int
    r: int

    @property
    def is_preterminal(self):
        return len(self.children) == 1 and isinstance(self.children[0], str)

    def leaves(self):
        if self.is_preterminal:
            return [self.children[0]]
        return [tok for c in self.children for tok in c.leaves()]

    def subtrees(self):
        """Pre-order traversal."""
        yield self
        if not self.is_preterminal:
            for c in self.children:
                yield from c.subtrees()

    def __len__(self):
        return self.r - self.l

    def __str__(self):
        return to_bracketed(self)


BinaryTree = Tree


@dataclass(frozen=True)
class LabeledSpan:
    l: int
    r: int
    label: str


@dataclass
class EntityAnnotation:
    tokens: list
    entities: set = field(default_factory=set)


def node(label, children, start=0):
    """Build a Tree from ``children`` (subtrees or one token), assigning spans from ``start``."""
    if isinstance(children, str):
        return Tree(label, (children,), start, start + 1)
    kids, pos = [], start
    for c in children:
        if isinstance(c, Tree):
            c = shift(c, pos - c.l)
        else:
            raise MalformedTree("bare tokens must sit under a pre-terminal")
        kids.append(c)
        pos = c.r
    if not kids:
        raise EmptyTree(f"node {label!r} has no children")
    return Tree(label, tuple(kids), start, pos)


def shift(t, offset):
    if offset == 0:
        return t
    if t.is_preterminal:
        return Tree(t.label, t.children, t.l + offset, t.r + offset)
    return Tree(t.label, tuple(shift(c, offset) for c in t.children), t.l + offset, t.r + offset)


# -- bracketed I/O -------------------------------------------------------------

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_bracketed(text):
    """Parse one s-expression such as ``(S (NP a) (VP b))``."""
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise EmptyTree("empty input")
    pos = 0

    def parse(start):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != "(":
            raise UnbalancedBrackets(f"expected '(' at token {pos}")
        pos += 1
        if pos >= len(tokens):
            raise UnbalancedBrackets("input ends after '('")
        label = tokens[pos]
        if label in "()":
            raise EmptyLabel(f"missing label at token {pos}")
        pos += 1
        kids, words = [], []
        offset = start
        while True:
            if pos >= len(tokens):
                raise UnbalancedBrackets(f"unclosed bracket for {label!r}")
            tok = tokens[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                child = parse(offset)
                kids.append(child)
                offset = child.r
            else:
                words.append(tok)
                pos += 1
        if words and kids:
            raise MalformedTree(f"{label!r} mixes tokens and subtrees")
        if len(words) > 1:
            raise MalformedTree(f"pre-terminal {label!r} covers {len(words)} tokens")
        if words:
            return Tree(label, (words[0],), start, start + 1)
        if not kids:
            raise EmptyTree(f"{label!r} has no children")
        return Tree(label, tuple(kids), start, offset)

    tree = parse(0)
    if pos != len(tokens):
        raise UnbalancedBrackets(f"trailing input after token {pos}")
    return tree


def to_bracketed(t):
    if t.is_preterminal:
        return f"({t.label} {t.children[0]})"
    return f"({t.label} " + " ".join(to_bracketed(c) for c in t.children) + ")"


def read_trees(path):
    with open(path, encoding="utf-8") as f:
        return [parse_bracketed(line) for line in f if line.strip()]


def write_trees(path, trees):
    with open(path, "w", encoding="utf-8") as f:
        for t in trees:
            f.write(to_bracketed(t) + "\n")


def read_entities(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            spans = {LabeledSpan(int(e["l"]), int(e["r"]), str(e["label"])) for e in rec["entities"]}
            out.append(EntityAnnotation(list(rec["tokens"]), spans))
    return out


def write_entities(path, annotations):
    with open(path, "w", encoding="utf-8") as f:
        for ann in annotations:
            ents = [{"l": s.l, "r": s.r, "label": s.label}
                    for s in sorted(ann.entities, key=lambda s: (s.l, -s.r, s.label))]
            f.write(json.dumps({"tokens": list(ann.tokens), "entities": ents}, ensure_ascii=False) + "\n")


# -- CNF -----------------------------------------------------------------------


def to_cnf(t):
    """Collapse unary chains into ``A+B`` labels, then left-binarize.

    Intermediate nodes introduced by binarization take the parent label with a
    trailing prime, e.g. ``(S a b c)`` becomes ``(S (S' a b) c)``.
    """
    labels = [t.label]
    cur = t
    while len(cur.children) == 1 and isinstance(cur.children[0], Tree):
        cur = cur.children[0]
        labels.append(cur.label)
    label = JOIN.join(labels)
    if cur.is_preterminal:
        return Tree(label, cur.children, t.l, t.r)
    kids = [to_cnf(c) for c in cur.children]
    acc = kids[0]
    for k in kids[1:-1]:
        acc = Tree(label + PRIME, (acc, k), acc.l, k.r)
    return Tree(label, (acc, kids[-1]), t.l, t.r)


def _chain(label, inner_children, l, r):
    parts = label.split(JOIN)
    node_ = Tree(parts[-1], inner_children, l, r)
    for part in reversed(parts[:-1]):
        node_ = Tree(part, (node_,), l, r)
    return node_


def from_cnf(bt, stats=None):
    """Undo :func:`to_cnf`: splice primed nodes, expand ``+`` chains.

    Primed nodes whose base label differs from the enclosing node's label
    (possible in decoded trees) are still spliced; ``stats`` (a Counter), when
    given, counts them under ``"orphan_primes"``.  A primed root or primed
    pre-terminal cannot be spliced and is un-primed instead.
    """
    if stats is None:
        stats = Counter()

    def strip(label):
        if label.endswith(PRIME):
            stats["unspliceable_primes"] += 1
            return label.rstrip(PRIME) or label
        return label

    def flatten(t, parent_label):
        # children of t with primed internal nodes spliced out
        out = []
        for c in t.children:
            if c.label.endswith(PRIME) and not c.is_preterminal:
                if c.label[: -len(PRIME)] != parent_label:
                    stats["orphan_primes"] += 1
                out.extend(flatten(c, parent_label))
            else:
                out.append(convert(c))
        return out

    def convert(t):
        label = t.label
        if t.is_preterminal:
            return _chain(strip(label), t.children, t.l, t.r)
        return _chain(label, tuple(flatten(t, label)), t.l, t.r)

    root = bt
    if root.label.endswith(PRIME) and not root.is_preterminal:
        root = Tree(strip(root.label), root.children, root.l, root.r)
    return convert(root)


def is_binary(t):
    return all(s.is_preterminal or len(s.children) == 2 for s in t.subtrees())


def spans_of(bt):
    """Pre-order labeled spans of a binary tree; exactly ``2n - 1`` of them."""
    if not is_binary(bt):
        raise MalformedTree("spans_of expects a binary tree")
    return [LabeledSpan(s.l, s.r, s.label) for s in bt.subtrees()]


def label_counts(trees):
    """Distinct node labels (pre-terminals excluded) before and after CNF."""
    raw, cnf = set(), set()
    for t in trees:
        raw.update(s.label for s in t.subtrees() if not s.is_preterminal)
        bt = to_cnf(t)
        cnf.update(s.label for s in bt.subtrees() if not s.is_preterminal)
    return len(raw), len(cnf)


# -- NER reduction -------------------------------------------------------------


def _check_nesting(spans):
    ordered = sorted(spans, key=lambda s: (s.l, -s.r))
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            if b.l >= a.r:
                break
            if b.r > a.r:
                raise CrossingEntities(f"entities {a} and {b} cross")


def ner_to_partial_tree(ann):
    """Embed (possibly nested) entities in a full binary tree under ``TOP``.

    Entities become internal nodes with their labels.  Everything else needed
    to complete the tree is labeled ``∅``: single tokens outside any smaller
    entity, and the left-branching nodes that combine sibling items inside an
    entity (or inside ``TOP``).  Entities sharing one span are joined into a
    single ``A+B`` label, outermost first.
    """
    n = len(ann.tokens)
    if n == 0:
        raise EmptyTree("sentence has no tokens")
    for s in ann.entities:
        if not 0 <= s.l < s.r <= n:
            raise TreeError(f"entity {s} outside sentence of length {n}")
    _check_nesting(ann.entities)

    by_span = {}
    for s in sorted(ann.entities, key=lambda s: (s.l, -s.r, s.label)):
        by_span.setdefault((s.l, s.r), []).append(s.label)
    if (0, n) in by_span:
        by_span[(0, n)] = [TOP] + by_span[(0, n)]
    else:
        by_span[(0, n)] = [TOP]
    # outer-to-inner order: sort by start, then longer first
    order = sorted(by_span, key=lambda sp: (sp[0], -sp[1]))

    def build(l, r, inner):
        """Tree over [l, r) given the entity spans strictly inside it (pre-sorted)."""
        items, i, pos = [], 0, l
        while pos < r:
            if i < len(inner) and inner[i][0] == pos:
                cl, cr = inner[i]
                j = i + 1
                while j < len(inner) and inner[j][0] < cr:
                    j += 1
                items.append(make(cl, cr, inner[i + 1:j]))
                i, pos = j, cr
            else:
                items.append(Tree(NULL, (ann.tokens[pos],), pos, pos + 1))
                pos += 1
        return items

    def make(l, r, inner):
        label = JOIN.join(by_span[(l, r)])
        if r - l == 1:
            return Tree(label, (ann.tokens[l],), l, r)
        items = build(l, r, inner)
        acc = items[0]
        for it in items[1:-1]:
            acc = Tree(NULL, (acc, it), acc.l, it.r)
        return Tree(label, (acc, items[-1]), l, r)

    return make(0, n, [sp for sp in order if sp != (0, n)])


def entities_of(bt, ignore=(NULL, TOP)):
    """Entity spans encoded in a (decoded) NER tree.

    Labels are split on ``+``; parts that are scaffolding (``∅``, ``TOP``) or
    primed are dropped.
    """
    out = set()
    for s in bt.subtrees():
        for part in s.label.split(JOIN):
            if part and part not in ignore and not part.endswith(PRIME):
                out.add(LabeledSpan(s.l, s.r, part))
    return out
