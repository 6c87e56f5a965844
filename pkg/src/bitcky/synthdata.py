"""Synthetic treebanks and nested-entity corpora with learnable structure.

Both generators tie tokens to the categories around them (determiners open
noun phrases, a distinct set of prepositions attaches to verbs, entity types
have their own trigger words), so a small encoder can recover trees and
labels from local evidence.  Generation is a pure function of
``(grammar, count, seed)``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .treebank import EntityAnnotation, LabeledSpan, Tree, node

PARSE_LEXICON = {
    "DT": ["the", "a", "this", "that", "every", "some"],
    "NN": ["cat", "dog", "man", "woman", "house", "car", "tree", "book", "river", "city",
           "child", "garden", "letter", "window", "teacher", "song"],
    "JJ": ["big", "small", "red", "old", "young", "happy", "dark", "quiet"],
    "RBD": ["very", "quite", "really", "rather"],
    "RBM": ["quickly", "slowly", "often", "loudly", "badly"],
    "VBT": ["saw", "liked", "found", "took", "painted", "read", "followed", "built"],
    "VBI": ["slept", "ran", "sang", "laughed", "waited", "smiled"],
    "MD": ["will", "can", "must", "should"],
    "INN": ["of", "with"],
    "INV": ["in", "on", "at", "near"],
    "PRP": ["he", "she", "they", "it"],
    "NNP": ["john", "mary", "paris", "alice", "bob"],
    ".": ["."],
}

# surface tag written into the tree for each lexical class
TAGS = {"RBD": "RB", "RBM": "RB", "VBT": "VB", "VBI": "VB", "INN": "IN", "INV": "IN"}

AMBIGUOUS_WORDS = ["run", "walk", "fish", "watch", "light"]


@dataclass
class SynthGrammar:
    """Knobs for the synthetic constituency grammar.

    ``ambiguity`` is the probability that a noun or verb slot draws a word from
    a shared pool usable as either.  ``merge`` renames phrase labels (e.g.
    ``{"ADJP": "PP"}``) so one surface label covers two distinct
    constructions.  ``max_len`` bounds sentence length by rejection.
    """

    labels: tuple = ("S", "NP", "VP", "PP", "ADJP", "ADVP")
    max_len: int = 12
    max_depth: int = 3
    ambiguity: float = 0.0
    merge: dict = field(default_factory=dict)
    seed: int = 0


class _ParseGen:
    def __init__(self, grammar, rng):
        self.g = grammar
        self.rng = rng

    def choose(self, options):
        weights = np.array([w for w, _ in options], dtype=np.float64)
        i = self.rng.choice(len(options), p=weights / weights.sum())
        return options[i][1]

    def word(self, cls):
        if cls in ("NN", "VBT") and self.g.ambiguity > 0 and self.rng.random() < self.g.ambiguity:
            return str(self.rng.choice(AMBIGUOUS_WORDS))
        return str(self.rng.choice(PARSE_LEXICON[cls]))

    def pre(self, cls):
        return ("pre", TAGS.get(cls, cls), self.word(cls))

    def label(self, name):
        return self.g.merge.get(name, name)

    def np_simple(self):
        form = self.choose([(0.5, "dn"), (0.3, "djn"), (0.2, "nnp")])
        if form == "dn":
            kids = [self.pre("DT"), self.pre("NN")]
        elif form == "djn":
            kids = [self.pre("DT"), self.pre("JJ"), self.pre("NN")]
        else:
            kids = [self.pre("NNP")]
        return (self.label("NP"), kids)

    def np_full(self):
        form = self.choose([(0.3, "simple"), (0.15, "adjp"), (0.15, "prp"), (0.2, "pp")])
        if form == "simple":
            return self.np_simple()
        if form == "adjp":
            adjp = (self.label("ADJP"), [self.pre("RBD"), self.pre("JJ")])
            return (self.label("NP"), [self.pre("DT"), adjp, self.pre("NN")])
        if form == "prp":
            return (self.label("NP"), [self.pre("PRP")])
        pp = (self.label("PP"), [self.pre("INN"), self.np_simple()])
        return (self.label("NP"), [self.pre("DT"), self.pre("NN"), pp])

    def vp(self, depth):
        options = [(0.35, "vt"), (0.15, "vi"), (0.15, "vtpp"), (0.1, "viadv"), (0.1, "vtadv")]
        if depth < self.g.max_depth:
            options.append((0.15, "md"))
        form = self.choose(options)
        vp = self.label("VP")
        if form == "vt":
            return (vp, [self.pre("VBT"), self.np_full()])
        if form == "vi":
            return (vp, [self.pre("VBI")])
        if form == "vtpp":
            pp = (self.label("PP"), [self.pre("INV"), self.np_simple()])
            return (vp, [self.pre("VBT"), self.np_full(), pp])
        if form == "viadv":
            return (vp, [self.pre("VBI"), (self.label("ADVP"), [self.pre("RBM")])])
        if form == "vtadv":
            return (vp, [self.pre("VBT"), self.np_full(), (self.label("ADVP"), [self.pre("RBM")])])
        return (vp, [self.pre("MD"), self.vp(depth + 1)])

    def sentence(self):
        return (self.label("S"), [self.np_full(), self.vp(0), self.pre(".")])


def _realize(spec, start=0):
    if spec[0] == "pre":
        return Tree(spec[1], (spec[2],), start, start + 1)
    label, kids = spec
    built, pos = [], start
    for k in kids:
        t = _realize(k, pos)
        built.append(t)
        pos = t.r
    return node(label, built, start)


def gen_parse_corpus(grammar=None, count=1000, seed=None):
    """``count`` trees from the synthetic grammar (deterministic in ``seed``)."""
    grammar = grammar or SynthGrammar()
    seed = grammar.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0x7A2])
    gen = _ParseGen(grammar, rng)
    out = []
    while len(out) < count:
        t = _realize(gen.sentence())
        if len(t) <= grammar.max_len:
            out.append(t)
    return out


def label_distribution(trees):
    """Counts of phrase labels (pre-terminals excluded)."""
    return Counter(s.label for t in trees for s in t.subtrees() if not s.is_preterminal)


# -- nested entities -----------------------------------------------------------

NER_LEXICON = {
    "title": ["mr", "mrs", "dr", "judge"],
    "name": ["smith", "jones", "garcia", "chen", "novak", "okafor", "silva"],
    "first": ["john", "maria", "wei", "anna", "omar"],
    "city": ["paris", "london", "berlin", "tokyo", "lagos", "lima"],
    "country": ["france", "japan", "peru", "kenya"],
    "orgword": ["acme", "globex", "initech", "umbrella", "stark"],
    "orgsuf": ["corp", "inc", "group", "bank"],
    "locword": ["lake", "mount", "cape"],
    "locname": ["erie", "kilimanjaro", "horn", "victoria"],
    "filler": ["visited", "met", "and", "said", "that", "yesterday", "with", "from", "to",
               "reported", "while", "then", "near", "called"],
}


@dataclass
class NerGrammar:
    labels: tuple = ("PER", "ORG", "LOC", "GPE")
    nesting: float = 0.5
    max_len: int = 14
    max_entities: int = 3
    seed: int = 0


class _NerGen:
    def __init__(self, grammar, rng):
        self.g = grammar
        self.rng = rng

    def w(self, cls):
        return str(self.rng.choice(NER_LEXICON[cls]))

    def gpe(self):
        if self.rng.random() < 0.5:
            return [self.w("city")], []
        return [self.w("country")], []

    def entity(self, kind):
        """Tokens and nested entities (offsets relative to the entity start)."""
        nested = self.rng.random() < self.g.nesting
        if kind == "GPE":
            return self.gpe()
        if kind == "PER":
            if nested:
                toks, _ = self.gpe()
                return ["mayor", "of"] + toks, [(2, 2 + len(toks), "GPE")]
            if self.rng.random() < 0.5:
                return [self.w("title"), self.w("name")], []
            return [self.w("first"), self.w("name")], []
        if kind == "ORG":
            if nested:
                if self.rng.random() < 0.5:
                    toks, _ = self.gpe()
                    return ["university", "of"] + toks, [(2, 2 + len(toks), "GPE")]
                toks, _ = self.gpe()
                return toks + [self.w("orgsuf")], [(0, len(toks), "GPE")]
            return [self.w("orgword"), self.w("orgsuf")], []
        if kind == "LOC":
            if nested:
                toks, _ = self.gpe()
                return ["coast", "of"] + toks, [(2, 2 + len(toks), "GPE")]
            return [self.w("locword"), self.w("locname")], []
        raise ValueError(kind)

    def sentence(self):
        tokens, ents = [], set()
        n_ent = int(self.rng.integers(0, self.g.max_entities + 1))
        for _ in range(n_ent):
            for _ in range(int(self.rng.integers(1, 3))):
                tokens.append(self.w("filler"))
            kind = str(self.rng.choice(list(self.g.labels)))
            toks, inner = self.entity(kind)
            start = len(tokens)
            tokens.extend(toks)
            ents.add(LabeledSpan(start, start + len(toks), kind))
            for a, b, lab in inner:
                ents.add(LabeledSpan(start + a, start + b, lab))
        for _ in range(int(self.rng.integers(1, 3))):
            tokens.append(self.w("filler"))
        return EntityAnnotation(tokens, ents)


def gen_ner_corpus(grammar=None, count=1000, seed=None):
    grammar = grammar or NerGrammar()
    seed = grammar.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0x4E52])
    gen = _NerGen(grammar, rng)
    out = []
    while len(out) < count:
        ann = gen.sentence()
        if len(ann.tokens) <= grammar.max_len:
            out.append(ann)
    return out
