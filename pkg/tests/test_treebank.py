import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitcky import treebank as T
from bitcky.synthdata import gen_parse_corpus


def random_tree(rng, n_tokens, depth=0):
    """A random n-ary tree with pre-terminals over ``n_tokens`` tokens."""
    labels = ["S", "NP", "VP", "PP", "X"]
    if n_tokens == 1 and rng.random() < 0.7:
        return ("pre", str(rng.choice(["DT", "NN", "VB"])), f"w{rng.integers(100)}")
    if n_tokens == 1:
        # unary chain above a pre-terminal
        return (str(rng.choice(labels)), [random_tree(rng, 1, depth + 1)])
    k = int(rng.integers(2, min(n_tokens, 4) + 1))
    cuts = sorted(rng.choice(np.arange(1, n_tokens), size=k - 1, replace=False))
    sizes = np.diff([0, *cuts, n_tokens])
    kids = [random_tree(rng, int(s), depth + 1) for s in sizes]
    if rng.random() < 0.2:
        # unary node over a branching one
        return (str(rng.choice(labels)), [(str(rng.choice(labels)), kids)])
    return (str(rng.choice(labels)), kids)


def realize(spec, start=0):
    if spec[0] == "pre":
        return T.Tree(spec[1], (spec[2],), start, start + 1)
    label, kids = spec
    built, pos = [], start
    for k in kids:
        t = realize(k, pos)
        built.append(t)
        pos = t.r
    return T.node(label, built, start)


# -- reading -------------------------------------------------------------------


def test_parse_simple():
    t = T.parse_bracketed("(S (NP a) (VP b))")
    assert (t.label, t.l, t.r) == ("S", 0, 2)
    assert [(c.label, c.l, c.r) for c in t.children] == [("NP", 0, 1), ("VP", 1, 2)]


def test_parse_nested():
    t = T.parse_bracketed("(TOP (S (NP (DT the) (NN cat)) (VP (VBD sat))))")
    assert len(t) == 3 and t.label == "TOP"
    assert t.leaves() == ["the", "cat", "sat"]


@pytest.mark.parametrize("text,err", [
    ("(S (NP a) (VP b)", T.UnbalancedBrackets),
    ("(S a))", T.UnbalancedBrackets),
    ("", T.EmptyTree),
    ("(S )", T.EmptyTree),
    ("(() a)", T.EmptyLabel),
])
def test_parse_errors(text, err):
    with pytest.raises(err):
        T.parse_bracketed(text)


def test_bracketed_round_trip(tmp_path):
    trees = gen_parse_corpus(count=20, seed=3)
    path = tmp_path / "trees.txt"
    T.write_trees(path, trees)
    assert T.read_trees(path) == trees
    for t in trees:
        assert T.parse_bracketed(T.to_bracketed(t)) == t


def test_entities_round_trip(tmp_path):
    anns = [T.EntityAnnotation(("mr", "smith", "of", "paris"),
                               frozenset({T.LabeledSpan(0, 2, "PER"), T.LabeledSpan(3, 4, "GPE")}))]
    path = tmp_path / "ents.jsonl"
    T.write_entities(path, anns)
    row = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert row["tokens"] == ["mr", "smith", "of", "paris"]
    assert {"l": 0, "r": 2, "label": "PER"} in row["entities"]
    back = T.read_entities(path)
    assert list(back[0].tokens) == list(anns[0].tokens)
    assert set(back[0].entities) == set(anns[0].entities)


# -- CNF -----------------------------------------------------------------------


def test_left_binarization():
    t = T.parse_bracketed("(S (X a) (Y b) (Z c))")
    assert str(T.to_cnf(t)) == "(S (S' (X a) (Y b)) (Z c))"


def test_unary_collapse():
    t = T.parse_bracketed("(S (VP (VB run)))")
    bt = T.to_cnf(t)
    assert bt.label == "S+VP+VB" and bt.is_preterminal


def test_from_cnf_examples():
    bt = T.parse_bracketed("(S (S' (X a) (Y b)) (Z c))")
    assert str(T.from_cnf(bt)) == "(S (X a) (Y b) (Z c))"
    assert str(T.from_cnf(T.parse_bracketed("(S+VP+VB run)"))) == "(S (VP (VB run)))"


def test_orphan_prime_is_spliced_and_counted():
    stats = Counter()
    bt = T.parse_bracketed("(S (NP' (X a) (Y b)) (Z c))")
    out = T.from_cnf(bt, stats)
    assert str(out) == "(S (X a) (Y b) (Z c))"
    assert sum(stats.values()) == 1


def test_cnf_round_trip_on_random_trees():
    rng = np.random.default_rng(0)
    for _ in range(300):
        t = realize(random_tree(rng, int(rng.integers(1, 10))))
        bt = T.to_cnf(t)
        assert T.is_binary(bt)
        assert len(T.spans_of(bt)) == 2 * len(t) - 1
        assert T.from_cnf(bt) == t
        # binarizing the recovered tree gives back the same binary form
        assert T.to_cnf(T.from_cnf(bt)) == bt


def test_spans_of_counts():
    bt2 = T.parse_bracketed("(S (A a) (B b))")
    bt3 = T.parse_bracketed("(S (S' (A a) (B b)) (C c))")
    assert len(T.spans_of(bt2)) == 3
    assert [(s.l, s.r, s.label) for s in T.spans_of(bt3)] == [
        (0, 3, "S"), (0, 2, "S'"), (0, 1, "A"), (1, 2, "B"), (2, 3, "C")]


def test_spans_of_rejects_nary():
    with pytest.raises(T.MalformedTree):
        T.spans_of(T.parse_bracketed("(S (A a) (B b) (C c))"))


def test_label_counts_fixture():
    # phrase labels before: TOP S NP VP; after: TOP+S NP VP NP'
    t = T.parse_bracketed("(TOP (S (NP (DT the) (NN cat)) (VP (VBD sat) (NP (DT a) (JJ b) (NN c)))))")
    assert T.label_counts([t]) == (4, 4)
    t2 = T.parse_bracketed("(S (NP (DT a) (JJ b) (NN c)) (VP (VB d) (PP (IN e) (NP (NN f))) (RB g)))")
    # before: S NP VP PP; after: S NP NP' VP VP' PP and unary PP-internal NP collapsed into NP+NN
    assert T.label_counts([t2]) == (4, 6)


def test_label_counts_synthetic_corpus():
    trees = gen_parse_corpus(count=300, seed=0)
    raw, cnf = T.label_counts(trees)
    assert cnf > raw


# -- NER reduction -------------------------------------------------------------


def test_ner_single_entity():
    ann = T.EntityAnnotation(("a", "b", "c"), {T.LabeledSpan(0, 2, "PER")})
    assert str(T.ner_to_partial_tree(ann)) == "(TOP (PER (∅ a) (∅ b)) (∅ c))"


def test_ner_no_entities_left_branching():
    ann = T.EntityAnnotation(("a", "b", "c"), set())
    assert str(T.ner_to_partial_tree(ann)) == "(TOP (∅ (∅ a) (∅ b)) (∅ c))"


def test_ner_crossing_rejected():
    ann = T.EntityAnnotation(("a", "b", "c"), {T.LabeledSpan(0, 2, "A"), T.LabeledSpan(1, 3, "B")})
    with pytest.raises(T.CrossingEntities):
        T.ner_to_partial_tree(ann)


def test_ner_nested_spans_present():
    ents = {T.LabeledSpan(0, 3, "A"), T.LabeledSpan(1, 3, "B")}
    bt = T.ner_to_partial_tree(T.EntityAnnotation(("a", "b", "c", "d"), ents))
    have = {(s.l, s.r, s.label) for s in T.spans_of(bt)}
    assert {(0, 3, "A"), (1, 3, "B")} <= have
    assert T.entities_of(bt) == ents


@st.composite
def nested_annotation(draw):
    n = draw(st.integers(1, 9))
    spans = []
    for _ in range(draw(st.integers(0, 5))):
        l = draw(st.integers(0, n - 1))
        r = draw(st.integers(l + 1, n))
        crosses = any(a < l < b < r or l < a < r < b for a, b in spans)
        if not crosses and (l, r) not in spans:
            spans.append((l, r))
    labels = draw(st.lists(st.sampled_from(["PER", "ORG", "LOC"]), min_size=len(spans),
                           max_size=len(spans)))
    ents = {T.LabeledSpan(l, r, y) for (l, r), y in zip(spans, labels)}
    return T.EntityAnnotation(tuple(f"t{i}" for i in range(n)), ents)


@settings(max_examples=200, deadline=None)
@given(nested_annotation())
def test_ner_tree_contains_every_entity(ann):
    bt = T.ner_to_partial_tree(ann)
    assert T.is_binary(bt)
    assert bt.label.split(T.JOIN)[0] == T.TOP
    assert len(T.spans_of(bt)) == 2 * len(ann.tokens) - 1
    assert T.entities_of(bt) == set(ann.entities)
