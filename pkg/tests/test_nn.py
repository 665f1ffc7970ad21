import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymvalley import nn
from asymvalley.exceptions import ConfigError, LayoutMismatchError

SMALL = nn.Architecture((2, 6, 5, 2))


def tiny_data(seed=0, n=24):
    return nn.Dataset("two-moons", n_train=n, n_test=200, noise=0.2, seed=seed)


def test_architecture_layout():
    lay = SMALL.layout()
    assert lay.names == ["layer0.weight", "layer0.bn.gamma", "layer0.bn.beta", "layer1.weight",
                         "layer1.bn.gamma", "layer1.bn.beta", "layer2.weight", "layer2.bias"]
    assert lay.size == 2 * 6 + 12 + 6 * 5 + 10 + 5 * 2 + 2
    nobn = nn.Architecture.parse("2-6-5-2:nobn")
    assert "layer0.bias" in nobn.layout() and not nobn.has_bn
    assert nn.Architecture.from_dict(SMALL.to_dict()) == SMALL
    with pytest.raises(ConfigError):
        nn.Architecture.parse("2-x-2")
    with pytest.raises(ValueError):
        nn.Architecture((2, 4, 1))
    with pytest.raises(ValueError):
        nn.Architecture((2, 4, 2), bn=(True, False))


def test_zero_weights_give_log2():
    p = nn.init_params(SMALL, 0)
    p.data[:] = 0.0
    X = np.random.default_rng(0).standard_normal((10, 2))
    y = np.arange(10) % 2
    assert nn.forward(SMALL, p, X, y, train=True).loss == pytest.approx(math.log(2), abs=1e-12)


def test_bn_identical_inputs_output_beta():
    arch = nn.Architecture((2, 3, 2))
    p = nn.init_params(arch, 1)
    p["layer0.bn.beta"][...] = [0.5, -1.0, 2.0]
    p["layer1.weight"][...] = np.eye(3)[:, :2]
    X = np.ones((4, 2))
    fr = nn.forward(arch, p, X, train=True)
    # zero batch variance: xhat = 0, activation = relu(beta)
    np.testing.assert_allclose(fr.logits, np.tile([0.5, 0.0], (4, 1)), atol=1e-12)


def test_beta_grad_is_upstream_sum():
    arch = nn.Architecture((2, 4, 3))
    p = nn.init_params(arch, 2)
    p["layer0.bn.beta"][...] = 5.0  # all units active
    rng = np.random.default_rng(1)
    X, y = rng.standard_normal((8, 2)), rng.integers(0, 3, 8)
    _, g = nn.loss_and_grad(arch, p, X, y)
    fr = nn.forward(arch, p, X, y, train=True)
    probs = np.exp(fr.logits - fr.logits.max(1, keepdims=True))
    probs /= probs.sum(1, keepdims=True)
    dz = probs.copy()
    dz[np.arange(8), y] -= 1
    expect = (dz / 8 @ p["layer1.weight"].T).sum(axis=0)
    np.testing.assert_allclose(g["layer0.bn.beta"], expect, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.integers(2, 9))
def test_gradient_check_property(seed, bn, n):
    arch = nn.Architecture((2, 5, 3), bn)
    rng = np.random.default_rng(seed)
    p = nn.init_params(arch, seed)
    err, _, _ = nn.gradient_check(arch, p, rng.standard_normal((n, 2)), rng.integers(0, 3, n))
    assert err < 1e-5


def test_eval_mode_gradient():
    p = nn.init_params(SMALL, 3)
    rng = np.random.default_rng(3)
    X, y = rng.standard_normal((7, 2)), rng.integers(0, 2, 7)
    st_ = nn.recompute_bn_stats(SMALL, p, rng.standard_normal((20, 2)))
    err, _, _ = nn.gradient_check(SMALL, p, X, y, train=False, bn_state=st_)
    assert err < 1e-5


def test_forward_validation():
    p = nn.init_params(SMALL)
    with pytest.raises(ValueError):
        nn.forward(SMALL, p, np.ones((1, 2)), train=True)
    with pytest.raises(ValueError):
        nn.forward(SMALL, p, np.ones((3, 2)))
    with pytest.raises(ValueError):
        nn.forward(SMALL, p, np.ones((3, 3)), train=True)
    with pytest.raises(ValueError):
        nn.forward(SMALL, p, np.ones((3, 2)), [0, 1, 2], train=True)
    with pytest.raises(LayoutMismatchError):
        nn.ParamVector(np.zeros(3), SMALL.layout())


def test_mask_algebra():
    lay = SMALL.layout()
    full, bn, non = nn.full_mask(lay), nn.bn_mask(lay), nn.non_bn_mask(lay)
    assert full.count == lay.size
    assert bn.count + non.count == lay.size
    assert not np.any(bn.mask & non.mask)
    np.testing.assert_array_equal(bn.complement().mask, non.mask)
    m = nn.matched_non_bn_mask(lay, 4)
    assert m.count == bn.count and not np.any(m.mask & bn.mask)
    np.testing.assert_array_equal(m.mask, nn.matched_non_bn_mask(lay, 4).mask)
    assert not np.array_equal(m.mask, nn.matched_non_bn_mask(lay, 5).mask)
    with pytest.raises(ValueError):
        nn.matched_non_bn_mask(nn.Architecture((2, 3, 2), False).layout(), 0)
    with pytest.raises(ValueError):
        nn.group_mask(lay, "weights")


def test_average_params_masked():
    lay = SMALL.layout()
    a, b = nn.init_params(SMALL, 1), nn.init_params(SMALL, 2)
    mask = nn.bn_mask(lay)
    avg = nn.average_params([a, b], mask)
    np.testing.assert_allclose(avg.data[mask.mask], (a.data[mask.mask] + b.data[mask.mask]) / 2)
    np.testing.assert_array_equal(avg.data[~mask.mask], b.data[~mask.mask])
    np.testing.assert_allclose(nn.average_params([a, b]).data, (a.data + b.data) / 2)
    with pytest.raises(ValueError):
        nn.average_params([])


def test_dataset_deterministic_and_disjoint():
    d = nn.Dataset(n_train=50, n_test=100, seed=3)
    a, b = d.generate(), d.generate()
    np.testing.assert_array_equal(a.X_train, b.X_train)
    assert a.X_train.shape == (50, 2) and a.X_test.shape == (100, 2)
    rows = {tuple(x) for x in a.X_train}
    assert not any(tuple(x) in rows for x in a.X_test)
    g = nn.Dataset("gaussian-mixture", 40, 40, 0.5, 1).generate()
    assert set(np.unique(g.y_train)) <= {0, 1}
    with pytest.raises(ValueError):
        nn.Dataset("spirals")


def test_recompute_matches_full_batch():
    p = nn.init_params(SMALL, 0)
    X = np.random.default_rng(0).standard_normal((30, 2))
    st_ = nn.recompute_bn_stats(SMALL, p, X)
    tr = nn.forward(SMALL, p, X, train=True)
    ev = nn.forward(SMALL, p, X, bn_state=st_)
    np.testing.assert_allclose(tr.logits, ev.logits, atol=1e-12)


def test_history_with_swa():
    cfg = nn.TrainConfig(0.05, 8, 200, seed=1, eval_every=100)
    res = nn.train(nn.Architecture((2, 4, 2)), tiny_data(1, 16), cfg, nn.SWAConfig(126))
    h = res.history
    assert len(h) == 200 and [r["epoch"] for r in h] == list(range(1, 201))
    assert all("swa_n" not in r for r in h[:125])
    assert h[125]["swa_n"] == 1 and h[-1]["swa_n"] == 75
    assert "swa_test_loss" in h[-1] and "test_loss" in h[99]
    assert res.swa is not None and res.swa_bn_state is not None


def test_zero_epochs_returns_init():
    init = nn.init_params(SMALL, 7)
    res = nn.train(SMALL, tiny_data(), nn.TrainConfig(epochs=0), init=init)
    np.testing.assert_array_equal(res.final.data, init.data)
    assert res.history == [] and res.swa is None


def test_train_deterministic():
    cfg = nn.TrainConfig(0.05, 8, 3, seed=2)
    a = nn.train(SMALL, tiny_data(), cfg)
    b = nn.train(SMALL, tiny_data(), cfg)
    np.testing.assert_array_equal(a.final.data, b.final.data)


def test_group_swa_keeps_unmasked_coords():
    cfg = nn.TrainConfig(0.05, 8, 6, seed=0, eval_every=0)
    res = nn.train(SMALL, tiny_data(), cfg, nn.SWAConfig(2, "bn"))
    np.testing.assert_array_equal(res.swa.data[~res.mask.mask], res.final.data[~res.mask.mask])
    with pytest.raises(ValueError):
        nn.train(SMALL, tiny_data(), cfg, nn.SWAConfig(6))


def test_schedule():
    cfg = nn.TrainConfig(eta=0.1, epochs=11, schedule="linear", eta_end=0.0, swa_eta=0.05)
    assert cfg.eta_at(1) == 0.1 and cfg.eta_at(11) == pytest.approx(0.0)
    assert cfg.eta_at(8, swa_start=5) == 0.05
    with pytest.raises(ValueError):
        nn.TrainConfig(schedule="cosine")


def test_checkpoint_round_trip(tmp_path):
    p = nn.init_params(SMALL, 9)
    st_ = nn.recompute_bn_stats(SMALL, p, np.random.default_rng(0).standard_normal((10, 2)))
    nn.save_checkpoint(tmp_path / "ck", p, SMALL, st_, tiny_data(), {"epoch": 3})
    ck = nn.load_checkpoint(tmp_path / "ck")
    np.testing.assert_array_equal(ck.params.data, p.data)
    assert ck.arch == SMALL and ck.meta == {"epoch": 3} and ck.dataset["n_train"] == 24
    np.testing.assert_array_equal(ck.bn_state.var[1], st_.var[1])
    with pytest.raises(LayoutMismatchError):
        nn.save_checkpoint(tmp_path / "bad", p, nn.Architecture((2, 3, 2)))


def test_sklearn_estimator():
    d = nn.Dataset(n_train=80, n_test=10, seed=0).generate()
    clf = nn.SWAClassifier(hidden=(8,), epochs=20, swa_start=10, random_state=0)
    clf.fit(d.X_train, np.where(d.y_train == 1, "b", "a"))
    pred = clf.predict(d.X_train)
    assert set(pred) <= {"a", "b"}
    assert clf.score(d.X_train, np.where(d.y_train == 1, "b", "a")) > 0.7
    np.testing.assert_allclose(clf.predict_proba(d.X_test).sum(1), 1.0)
    assert clf.get_params()["swa_start"] == 10
