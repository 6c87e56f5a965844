import json
import math

import numpy as np
import pytest

from bitcky import trainer as T
from bitcky.synthdata import gen_parse_corpus
from bitcky.treebank import parse_bracketed


def test_greedy_batches():
    # with no shuffle: 600 alone, then 500 + 300 = 800 <= 1024
    assert T.make_batches([600, 500, 300], 1024, 0, shuffle=False) == [[0], [1, 2]]


def test_batches_cover_corpus_within_budget():
    lengths = list(np.random.default_rng(0).integers(1, 40, size=200))
    batches = T.make_batches(lengths, 100, 7)
    assert sorted(i for b in batches for i in b) == list(range(200))
    assert all(sum(lengths[i] for i in b) <= 100 for b in batches)
    assert T.make_batches(lengths, 100, 7) == batches
    assert T.make_batches(lengths, 100, 8) != batches


def test_sentence_exceeds_budget():
    with pytest.raises(T.SentenceExceedsBudget):
        T.make_batches([2000], 1024, 0)


def test_batch_stream_reshuffles_per_epoch():
    lengths = [5] * 20
    s = T.BatchStream(lengths, 20, 3)
    first = [s[i] for i in range(5)]
    second = [s[i] for i in range(5, 10)]
    assert sorted(i for b in first for i in b) == list(range(20))
    assert first != second


def test_lr_schedule_endpoints():
    cfg = T.TrainConfig(steps=100, warmup=10, lr=0.01)
    assert T.lr_schedule(0, cfg) == 0.0
    assert T.lr_schedule(10, cfg) == pytest.approx(0.01)
    assert T.lr_schedule(5, cfg) == pytest.approx(0.005)
    assert T.lr_schedule(55, cfg) == pytest.approx(0.005)
    assert T.lr_schedule(100, cfg) == 0.0


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        T.TrainConfig(steps=10, warmup=10)
    with pytest.raises(ValueError):
        T.TrainConfig(loss="nope")
    with pytest.raises(ValueError):
        T.TrainConfig.from_json({"K": 4, "bogus": 1})
    cfg = T.TrainConfig(K=4)
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_json()))
    assert T.TrainConfig.load(tmp_path / "c.json") == cfg


def test_adam_single_step_closed_form():
    lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
    p = {"w": np.array([0.5])}
    opt = T.AdamW(b1, b2, eps, wd)
    g = 0.3
    opt.step(p, {"w": np.array([g])}, lr)
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    want = 0.5 - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * 0.5)
    assert abs(p["w"][0] - want) <= 1e-12
    # second step
    w1 = p["w"][0]
    g2 = -0.2
    opt.step(p, {"w": np.array([g2])}, lr)
    m = b1 * (1 - b1) * g + (1 - b1) * g2
    v = b2 * (1 - b2) * g * g + (1 - b2) * g2 * g2
    want2 = w1 - lr * ((m / (1 - b1 ** 2)) / (math.sqrt(v / (1 - b2 ** 2)) + eps) + wd * w1)
    assert abs(p["w"][0] - want2) <= 1e-12


def test_clip_grads():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = T.clip_grads(g, 1.0)
    assert norm == 5.0
    assert clipped["a"][0] == pytest.approx(0.6) and clipped["b"][0] == pytest.approx(0.8)
    same, _ = T.clip_grads(g, 10.0)
    assert same["a"][0] == 3.0


def _small_setup(steps=12, **kw):
    trees = gen_parse_corpus(count=40, seed=5)
    ex = T.make_examples(trees, "parse")
    cfg = T.TrainConfig(K=3, d=8, steps=steps, warmup=2, token_budget=40, log_every=0, **kw)
    return cfg, ex


def test_zero_learning_rate_changes_nothing():
    cfg, ex = _small_setup(lr=0.0)
    init = T.new_model(cfg, ex)
    ck = T.train(cfg, ex)
    for name in init.tensors:
        assert np.array_equal(init[name].value, ck.params[name].value)


def test_resume_is_bit_identical(tmp_path):
    cfg, ex = _small_setup(steps=12)
    full = T.train(cfg, ex, out_dir=tmp_path / "full")
    T.train(cfg, ex, out_dir=tmp_path / "part", stop_at=5)
    half = T.Checkpoint.load(tmp_path / "part" / "final.ckpt.json")
    assert half.step == 5
    resumed = T.train(cfg, ex, out_dir=tmp_path / "part", resume=half)
    assert resumed.losses == full.losses
    for name in full.params.tensors:
        assert np.array_equal(full.params[name].value, resumed.params[name].value)
    a = (tmp_path / "full" / "train.tsv").read_text()
    b = (tmp_path / "part" / "train.tsv").read_text()
    assert a == b


def test_checkpoint_round_trip(tmp_path):
    cfg, ex = _small_setup(steps=4)
    ck = T.train(cfg, ex, out_dir=tmp_path)
    again = T.Checkpoint.load(tmp_path / "final.ckpt.json")
    assert again.step == 4 and again.config == cfg
    assert again.params.vocab == ck.params.vocab
    for name in ck.params.tensors:
        assert np.array_equal(again.params[name].value, ck.params[name].value)
        assert np.array_equal(again.optimizer.m[name], ck.optimizer.m[name])
    data = json.loads((tmp_path / "final.ckpt.json").read_text())
    data["config_hash"] = "0" * 16
    with pytest.raises(ValueError):
        T.Checkpoint.from_json(data)


def test_one_sentence_descent():
    tree = parse_bracketed("(S (NP (DT the) (NN cat)) (VP (VB saw) (NP (DT a) (NN dog))) (. .))")
    ex = T.make_examples([tree], "parse")
    cfg = T.TrainConfig(K=4, d=16, steps=50, warmup=5, p_mask=0.0, p_drop=0.0, loss="max",
                        token_budget=16, log_every=0)
    ck = T.train(cfg, ex)
    losses = ck.losses
    assert len(losses) == 50
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_training_output_files(tmp_path):
    cfg, ex = _small_setup(steps=4, checkpoint_every=2)
    T.train(cfg, ex, out_dir=tmp_path)
    rows = (tmp_path / "train.tsv").read_text().splitlines()
    assert rows[0] == "step\tlr\tloss" and len(rows) == 5
    assert (tmp_path / "step2.ckpt.json").exists()
    assert (tmp_path / "vocab.txt").exists()


def test_predict_produces_trees():
    cfg, ex = _small_setup(steps=3)
    ck = T.train(cfg, ex)
    cb = T.build_codebook(ck.params, ex)
    pred = T.predict(ck.params, cb, [e.tokens for e in ex[:5]])
    for e, p in zip(ex, pred):
        assert p.leaves() == e.tokens
    report = T.evaluate(ck.params, cb, ex[:5], "parse")
    assert 0.0 <= report.f1 <= 1.0
