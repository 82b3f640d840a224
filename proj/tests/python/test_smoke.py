# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import drill_lm


KINDS = ["full_softmax", "weight_tying", "bilinear", "dual_nonlinear", "drill"]


def small_config(tmp_path, extra=""):
    drill_lm.generate_corpus(tmp_path / "corpus", vocab=40, classes=5, train_tokens=3000,
                             valid_tokens=400, test_tokens=400, seed=3)
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[data]\ntrain = corpus/train.txt\nvalid = corpus/valid.txt\ntest = corpus/test.txt\n"
        "[encoder]\nhidden_size = 8\nembed_size = 8\n"
        "[training]\nepochs = 1\nbatch_size = 4\nbptt_len = 10\n"
        "[run]\nout_dir = out\n" + extra
    )
    return cfg


def test_param_count_matches_model():
    for kind in KINDS:
        m = drill_lm.Model(25, kind=kind, embed_size=6, hidden_size=6, depth=3, joint_dim=4)
        joint = 4 if kind == "dual_nonlinear" else 0
        assert m.output_parameters == drill_lm.param_count(kind, 25, 6, 6, joint=joint, depth=3)
    assert drill_lm.param_count("drill", 10000, 400, 400, depth=4) == 651600
    with pytest.raises(drill_lm.ConfigError):
        drill_lm.param_count("softmax9", 10, 4, 4)


def test_vocab_roundtrip():
    v = drill_lm.Vocab("the cat sat\nthe mat\n")
    assert len(v) == 6  # the, cat, sat, mat, <eos>, <unk>
    ids = v.encode("the dog\n")
    assert ids == [v.id("the"), v.unk_id, v.eos_id]
    assert v.token(v.id("cat")) == "cat"
    assert len(v.hash) == 16


def test_logits_shape_and_uniform_perplexity():
    m = drill_lm.Model(11, kind="drill", embed_size=5, hidden_size=5, depth=2)
    out = m.logits(np.array([[1, 2], [3, 4], [5, 6]]))
    assert out.shape == (6, 11)
    for name, value in m.parameters().items():
        m.set_parameter(name, np.zeros_like(value))
    assert m.perplexity(list(range(11)) * 3) == pytest.approx(11.0, rel=1e-14)
    with pytest.raises(drill_lm.ShapeError):
        m.set_parameter("output.b", np.zeros((2, 2)))


def test_gradient_check_and_save_load(tmp_path):
    m = drill_lm.Model(7, kind="drill", embed_size=4, hidden_size=4, depth=2, activation="tanh",
                       dropout_mode="standard", dropout_rate=0.3, seed=5)
    # Unit-scale weights keep every gradient well above the central-difference noise floor.
    rng = np.random.default_rng(0)
    for name, value in m.parameters().items():
        m.set_parameter(name, rng.uniform(-1.0, 1.0, value.shape))
    err = drill_lm.gradient_check(m, np.array([[1], [2], [3]]), [2, 3, 4], h=1e-4)
    assert err < 1e-5
    path = tmp_path / "m.ckpt"
    m.save(path)
    back = drill_lm.Model.load(path)
    x = np.array([1, 4, 2, 6])
    assert np.array_equal(back.logits(x), m.logits(x))
    with pytest.raises(drill_lm.LoadError):
        drill_lm.Model.load(tmp_path / "missing.ckpt")


def test_fit_reduces_validation_perplexity():
    text = drill_lm.generate_corpus(vocab=30, classes=4, train_tokens=4000, valid_tokens=500,
                                    test_tokens=100, seed=1)
    v = drill_lm.Vocab(text["train"])
    m = drill_lm.Model(len(v), embed_size=16, hidden_size=16, seed=2)
    valid = v.encode(text["valid"])
    before = m.perplexity(valid)
    log = m.fit(v.encode(text["train"]), valid, epochs=3, lr=10.0, batch_size=8, bptt_len=20)
    assert len(log) == 3
    assert log[-1]["val_ppl"] < before
    assert math.isfinite(log[-1]["train_loss"])


def test_commands(tmp_path):
    cfg = small_config(tmp_path, "[ablate]\nkinds = weight_tying, drill:k=2\n")
    rows = drill_lm.train(cfg, seed=4)
    assert rows[0]["seed"] == 4
    ckpt = tmp_path / "out" / "best_seed4.ckpt"
    assert ckpt.exists()
    res = drill_lm.evaluate(cfg, ckpt, split="valid")
    assert res["perplexity"] > 1.0 and res["scored_tokens"] > 0
    bands = drill_lm.bands(cfg, ckpt, ckpt)
    assert all(b["relative_diff_pct"] in (None, 0.0) for b in bands)
    table = drill_lm.ablate(cfg)
    assert [r["variant"] for r in table] == ["weight_tying", "drill-k2"]
    report = drill_lm.params(cfg)
    assert report["total"] == report["embedding"] + report["encoder"] + report["output_layer"]


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[training]\nepoch = 3\n")
    with pytest.raises(drill_lm.ConfigError, match="epoch"):
        drill_lm.params(bad)
    assert issubclass(drill_lm.ConfigError, drill_lm.DrillError)
