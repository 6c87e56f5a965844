import math

import numpy as np
import pytest

from bitcky import chart as C
from bitcky import contrastive as L
from bitcky import grad as G
from bitcky.encoder import Vocab, init_params, score_sentences
from bitcky.treebank import LabeledSpan


def test_binarize_examples():
    assert L.binarize([0.75], [0.25]).tolist() == [1]
    assert L.binarize([0.5], [0.5]).tolist() == [-1]
    assert L.binarize([0.0, 0.0], [0.0, 0.0]).tolist() == [-1, -1]


def test_similarity_from_chart():
    # n=2, K=1, g(0,2)=ln 3 gives μ_bit(0,2) = (0.75, 0.25)
    g = np.zeros((3, 3, 1))
    g[0, 2, 0] = math.log(3)
    _, mc = C.marginals(C.ScoreChart.single(g))
    s = L.similarity(mc.pos[0, 0, 2], mc.neg[0, 0, 2], [1])
    assert s.item() == pytest.approx(0.75, abs=1e-12)


def test_similarity_maximized_by_binarized_code():
    rng = np.random.default_rng(1)
    pos = rng.uniform(0, 1, size=4)
    neg = 1 - pos
    best = L.similarity(pos, neg, L.binarize(pos, neg)).item()
    for bits in np.ndindex(*(2,) * 4):
        code = np.array(bits) * 2 - 1
        s = L.similarity(pos, neg, code).item()
        assert 0.0 <= s <= 1.0
        assert s <= best + 1e-15


def test_similarity_matrix_matches_scalar_form():
    rng = np.random.default_rng(2)
    pos = rng.uniform(size=(5, 3))
    neg = rng.uniform(size=(5, 3))
    codes = rng.choice([-1, 1], size=(5, 3))
    sim = L.similarity_matrix(G.const(pos), G.const(neg), codes).value
    for i in range(5):
        for j in range(5):
            assert sim[i, j] == pytest.approx(L.similarity(pos[i], neg[i], codes[j]).item(), abs=1e-15)


# -- selection -----------------------------------------------------------------


def test_six_strategies():
    assert set(L.STRATEGIES) == {"self", "sup", "sup-max", "hash", "hash-mean", "max"}
    assert L.STRATEGIES["max"] == L.SelectionStrategy("N∪S", "max-P")
    assert len(set(L.STRATEGIES.values())) == 6


def test_selection_sets():
    labels = ["NP", "NP'", "NP", "VP"]
    neg, posi = L.select_instances(0, labels, "max")
    assert neg.tolist() == [0, 1, 3]
    assert posi.tolist() == [0, 2]
    neg, posi = L.select_instances(0, labels, "self")
    assert neg.tolist() == [0, 1, 2, 3] and posi.tolist() == [0]
    # primed labels are distinct labels
    neg, posi = L.select_instances(1, labels, "hash")
    assert 1 in neg and 0 in neg and posi.tolist() == [1]


def test_self_always_in_positives():
    rng = np.random.default_rng(3)
    labels = list(rng.choice(["a", "b", "c"], size=12))
    for name in L.STRATEGIES:
        for i in range(12):
            neg, posi = L.select_instances(i, labels, name)
            assert i in posi and i in neg


# -- losses --------------------------------------------------------------------


def test_max_loss_hand_value():
    # s(i,i)=0.8 with one negative at 0.2 and no other positives
    out = L.loss(0, [0.8, 0.2], ["a", "b"], "max").item()
    assert out == pytest.approx(0.437488, abs=1e-6)
    assert out == pytest.approx(math.log1p(math.exp(-0.6)), abs=1e-15)


def test_max_equals_hash_when_positives_are_self():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(2, 9))
        sims = rng.uniform(0, 1, size=m)
        labels = [f"y{j}" for j in range(m)]  # every label unique, so P = S
        i = int(rng.integers(m))
        a = L.loss(i, sims, labels, "max").item()
        b = L.loss(i, sims, labels, "hash").item()
        worst = max(worst, abs(a - b))
    assert worst <= 1e-12


def test_uniform_closed_forms():
    labels = ["a", "a", "b", "c", "a", "b"]
    sims = np.full(6, 0.37)
    n_p = labels.count("a")
    assert L.loss(0, sims, labels, "self").item() == pytest.approx(math.log(6), abs=1e-12)
    n_ns = 6 - n_p + 1
    assert L.loss(0, sims, labels, "max").item() == pytest.approx(math.log(n_ns / n_p), abs=1e-12)


def test_max_loss_monotone_in_positive_similarity():
    rng = np.random.default_rng(5)
    labels = ["a", "b", "a", "a", "c"]
    sims = rng.uniform(size=5)
    base = L.loss(0, sims, labels, "max").item()
    for p in (0, 2, 3):
        for bump in (0.01, 0.3):
            s2 = sims.copy()
            s2[p] += bump
            assert L.loss(0, s2, labels, "max").item() <= base + 1e-15


def test_nonnegative_losses():
    rng = np.random.default_rng(6)
    labels = list(rng.choice(["a", "b", "c"], size=8))
    for _ in range(50):
        sims = rng.uniform(size=8)
        for name in ("self", "hash"):
            assert L.loss(3, sims, labels, name).item() >= -1e-15
        # L_max is only bounded below by 0 when P = S
        unique = [f"y{j}" for j in range(8)]
        assert L.loss(3, sims, unique, "max").item() >= -1e-15


def test_max_loss_can_go_negative():
    # the positive sum runs over all of P, the denominator only holds i from P
    out = L.loss(0, [0.5, 0.5, 0.5, 0.1], ["a", "a", "a", "b"], "max").item()
    assert out == pytest.approx(math.log((math.exp(0.5) + math.exp(0.1)) / (3 * math.exp(0.5))), abs=1e-15)
    assert out < 0


def test_vectorized_losses_match_per_instance():
    rng = np.random.default_rng(7)
    labels = list(rng.choice(["a", "b", "c", "a'"], size=7))
    sim = rng.uniform(size=(7, 7))
    for name in L.STRATEGIES:
        for t in (1.0, 0.3):
            vec = L.losses(G.const(sim), labels, name, temperature=t).value
            for i in range(7):
                assert vec[i] == pytest.approx(L.loss(i, sim[i], labels, name, temperature=t).item(),
                                               abs=1e-12)


# -- batch loss ----------------------------------------------------------------


def _toy_batch(seed=0, K=3):
    sents = [["the", "cat", "sat"], ["a", "dog"]]
    vocab = Vocab.from_corpus(sents)
    params = init_params(vocab, d=6, K=K, seed=seed)
    # scale up so marginals are far from uniform
    for t in params.tensors.values():
        t.value *= 4.0
    spans = [
        [LabeledSpan(0, 3, "S"), LabeledSpan(0, 2, "NP"), LabeledSpan(0, 1, "DT"),
         LabeledSpan(1, 2, "NN"), LabeledSpan(2, 3, "VP+VB")],
        [LabeledSpan(0, 2, "NP"), LabeledSpan(0, 1, "DT"), LabeledSpan(1, 2, "NN")],
    ]
    return params, sents, spans


def _views(params, sents, seed):
    rng1 = np.random.default_rng([seed, 1])
    rng2 = np.random.default_rng([seed, 2])
    _, m1 = C.marginals(score_sentences(params, sents, "train", rng1))
    _, m2 = C.marginals(score_sentences(params, sents, "train", rng2))
    return m1, m2


def straight_line_batch_loss(m1, m2, spans, strategy):
    """Python-float reimplementation from the definitions, one term at a time."""
    strat = L.STRATEGIES[strategy]
    inst = [(b, sp.l, sp.r, sp.label) for b, ss in enumerate(spans) for sp in ss]

    def bits(mc, b, l, r):
        return mc.pos.value[b, l, r].tolist(), mc.neg.value[b, l, r].tolist()

    def code(mc, b, l, r):
        p, q = bits(mc, b, l, r)
        return [1 if x > y else -1 for x, y in zip(p, q)]

    def sim(mc, i, c):
        p, q = bits(mc, *inst[i][:3])
        return sum(p[k] if c[k] > 0 else q[k] for k in range(len(c))) / len(c)

    def lse(xs):
        m = max(xs)
        return m + math.log(sum(math.exp(x - m) for x in xs))

    def term(mc_i, mc_codes, i):
        s = [sim(mc_i, i, code(mc_codes, *inst[j][:3])) for j in range(len(inst))]
        y = inst[i][3]
        if strat.negatives == "N∪P":
            negs = list(range(len(inst)))
        else:
            negs = [j for j in range(len(inst)) if inst[j][3] != y or j == i]
        pos = [j for j in range(len(inst)) if inst[j][3] == y]
        if strat.positives == "S":
            pt = s[i]
        elif strat.positives == "mean-P":
            pt = sum(s[j] for j in pos) / len(pos)
        else:
            pt = lse([s[j] for j in pos])
        return lse([s[j] for j in negs]) - pt

    total = 0.0
    for i in range(len(inst)):
        total += term(m1, m2, i) + term(m2, m1, i)
    return total / len(inst)


@pytest.mark.parametrize("strategy", sorted(L.STRATEGIES))
def test_batch_loss_matches_straight_line_oracle(strategy):
    params, sents, spans = _toy_batch()
    m1, m2 = _views(params, sents, 0)
    targets = L.TargetSpans.from_trees(spans)
    got = L.batch_loss(m1, m2, targets, strategy).item()
    assert abs(got - straight_line_batch_loss(m1, m2, spans, strategy)) <= 1e-12


def test_batch_loss_symmetric_for_identical_views():
    params, sents, spans = _toy_batch()
    _, mc = C.marginals(score_sentences(params, sents, "eval"))
    targets = L.TargetSpans.from_trees(spans)
    pos, neg = targets.gather(mc)
    codes = L.binarize(pos, neg)
    l12 = L.losses(L.similarity_matrix(pos, neg, codes), targets.labels, "hash").value
    total = L.batch_loss(mc, mc, targets, "hash").item()
    assert total == pytest.approx(2 * l12.mean(), abs=1e-14)


def test_single_sentence_term_count():
    params, sents, spans = _toy_batch()
    _, mc = C.marginals(score_sentences(params, [["a", "dog"]], "eval"))
    targets = L.TargetSpans.from_trees([spans[1]])
    assert len(targets) == 3
    out = L.batch_loss(mc, mc, targets, "max").item()
    pos, neg = targets.gather(mc)
    per = L.losses(L.similarity_matrix(pos, neg, L.binarize(pos, neg)), targets.labels, "max").value
    assert out == pytest.approx(2 * per.sum() / 3, abs=1e-14)


def test_degenerate_batch_raises():
    params, _, _ = _toy_batch()
    _, mc = C.marginals(score_sentences(params, [["a"]], "eval"))
    targets = L.TargetSpans.from_trees([[LabeledSpan(0, 1, "DT")]])
    with pytest.raises(L.EmptyNegativeSet):
        L.batch_loss(mc, mc, targets, "max")


def test_batch_loss_gradcheck_all_encoder_params():
    params, sents, spans = _toy_batch(seed=3, K=2)
    targets = L.TargetSpans.from_trees(spans)

    def f():
        m1, m2 = _views(params, sents, 9)
        return L.batch_loss(m1, m2, targets, "max")

    report = G.grad_check(f, params.tensors, h=1e-5, tol=1e-4)
    assert report.passed, report.summary()
