import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymvalley import nn, probes
from asymvalley.exceptions import LayoutMismatchError
from asymvalley.valley_models import (AsymmetrySpec, GradientBounds, IsotropicQuadratic, PiecewiseValley1D,
                                      SeparableValleyND, build_valley_from_spec)


class Linear:
    def __init__(self, a, b=0.0):
        self.a, self.b = np.asarray(a, dtype=float), b

    def loss(self, x):
        return float(self.a @ x + self.b)


class DoubleWell:
    def loss(self, x):
        return float((x[0] ** 2 - 1) ** 2)


class LossOnly:
    """Wraps a model and hides its gradient, forcing finite differences."""

    def __init__(self, m):
        self.m = m

    def loss(self, x):
        return self.m.loss(x)


def test_direction_normalized_and_validated():
    d = probes.Direction([3.0, 4.0])
    np.testing.assert_allclose(d.vector, [0.6, 0.8])
    with pytest.raises(ValueError):
        probes.Direction([0.0, 0.0])
    with pytest.raises(ValueError):
        probes.Direction([1.0], "diagonal")
    assert probes.Direction.between([0, 0], [0, 2]).kind == "inter-solution"


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["random-0-1", "random-pm1", "random-gaussian"]), st.integers(1, 30), st.integers(0, 999))
def test_sampled_directions(kind, d, seed):
    u = probes.sample_direction(kind, d, seed)
    assert np.linalg.norm(u.vector) == pytest.approx(1.0)
    np.testing.assert_array_equal(u.vector, probes.sample_direction(kind, d, seed).vector)
    if kind == "random-0-1":
        assert np.all(u.vector >= 0)


def test_group_masked_direction_support():
    m = np.array([True, False, True, False])
    u = probes.sample_direction("group-masked", 4, 1, m)
    assert np.all(u.vector[~m] == 0) and np.all(u.vector[m] > 0)
    with pytest.raises(LayoutMismatchError):
        probes.sample_direction("group-masked", 3, 1, m)
    with pytest.raises(ValueError):
        probes.sample_direction("group-masked", 4, 1, np.zeros(4, bool))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(-2, 2))
def test_slice_of_linear_is_linear(a, b):
    a = np.array(a)
    center = np.array([0.5, -1.0, 2.0])
    u = probes.Direction([1.0, 2.0, -2.0])
    p = probes.slice(Linear(a, b), center, u, (-2, 2), 9)
    expect = a @ center + b + p.offsets * (a @ u.vector)
    np.testing.assert_allclose(p.values, expect, atol=1e-12)


def test_slice_validation_and_second():
    q = IsotropicQuadratic(2)
    p = probes.slice(q, [0, 0], [1, 0], (-1, 1), 5, second=Linear([1, 0]))
    np.testing.assert_allclose(p.values, 0.5 * p.offsets ** 2)
    np.testing.assert_allclose(p.second, p.offsets)
    with pytest.raises(ValueError):
        probes.slice(q, [0, 0], [1, 0], (1, -1))
    with pytest.raises(LayoutMismatchError):
        probes.slice(q, [0, 0], [1, 0, 0])


@pytest.mark.parametrize("spec", [(2.5, 0.2, 7.5, 1.2), (4.0, 0.0270, 12.1, 2.0), (4, 0.1, 5.22, 2)])
def test_classify_exact_and_fd_agree(spec):
    s = AsymmetrySpec(*spec)
    v = build_valley_from_spec(s)
    sep = SeparableValleyND.embed([v], 3, 0)
    u = sep.directions[0]
    a = probes.classify_direction(sep, np.zeros(3), u, s)
    b = probes.classify_direction(LossOnly(sep), np.zeros(3), u, s)
    assert a.holds and b.holds
    assert a.method == "exact-gradient" and b.method == "central-difference"
    assert a.flat_max_slope == pytest.approx(b.flat_max_slope, rel=1e-6)


def test_classify_grid_validation():
    s = AsymmetrySpec(2, 0.1, 5, 0.5)
    v = build_valley_from_spec(s)
    with pytest.raises(ValueError):
        probes.classify_direction(v, [0.0], [1.0], s, np.linspace(0.6, 1.9, 10))
    with pytest.raises(ValueError):
        probes.default_grid(0.5, 2, 8)


def test_fit_spec_quadratic_ratio():
    # flat slope l and sharp magnitude l on the interior grid: c = min(l) / max(l) < 1
    f = probes.fit_direction_spec(IsotropicQuadratic(4), np.zeros(4), np.eye(4)[0], probes.SpecPolicy(3, 0.5))
    g = probes.default_grid(0.5, 3, 32)
    assert f.c == pytest.approx(g[0] / g[-1], rel=1e-12) and not f.hit


def test_find_direction_on_asymmetric_valley():
    sep = SeparableValleyND.embed([PiecewiseValley1D(GradientBounds.tight(0.1, -1.0))], 4, 2)
    res = probes.find_asymmetric_direction(sep, np.zeros(4), probes.SpecPolicy(), trials=20, seed=0,
                                           kind="random-pm1")
    assert res.found and res.verdict.holds and res.fitted.c > 2
    assert 0 < res.hit_rate < 1
    none = probes.find_asymmetric_direction(IsotropicQuadratic(4), np.zeros(4), trials=5)
    assert not none.found and none.hit_rate == 0


def test_neighborhood_separable_holds_everywhere():
    s = AsymmetrySpec(3, 0.1, 5, 0.5)
    sep = SeparableValleyND.embed([build_valley_from_spec(s)], 5, 1)
    res = probes.verify_neighborhood_asymmetry(sep, np.zeros(5), sep.directions[0], s, 2.0, 20, seed=3)
    assert res.holds_fraction == 1.0
    assert np.max(res.slice_variance) < 1e-20
    with pytest.raises(ValueError):
        probes.verify_neighborhood_asymmetry(sep, np.zeros(5), sep.directions[0], s, 1.0, 5)


def test_interpolate_endpoints_exact():
    q = IsotropicQuadratic(3, center=[1, 1, 1])
    a, b = np.zeros(3), np.array([2.0, 0.5, 1.0])
    res = probes.interpolate(q, a, b, (-0.5, 1.5), 6)
    ts = res.train.offsets
    assert 0.0 in ts and 1.0 in ts
    assert res.train.values[ts == 0.0][0] == q.loss(a)
    assert res.train.values[ts == 1.0][0] == q.loss(b)
    assert res.header == ["t", "train_loss"]


def test_double_well_has_bump_quadratic_does_not():
    res = probes.interpolate(DoubleWell(), [-1.0], [1.0], steps=41)
    assert res.bump["train"]["bump"]
    assert res.bump["train"]["t_at_max"] == pytest.approx(0.5)
    res2 = probes.interpolate(IsotropicQuadratic(1), [-1.0], [1.0], steps=41)
    assert not res2.bump["train"]["bump"]


def test_random_ray_offset_and_quadratic():
    q = IsotropicQuadratic(5, scale=2.0)
    radii = np.linspace(0, 2, 11)
    r = probes.random_ray_profile(q, np.zeros(5), 10, radii, seed=1)
    np.testing.assert_allclose(r.mean, radii ** 2, atol=1e-12)
    shifted = probes.random_ray_profile(Linear(np.zeros(5), 3.0), np.zeros(5), 10, radii)
    np.testing.assert_allclose(shifted.mean, 3.0)
    np.testing.assert_allclose(shifted.stderr, 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        probes.random_ray_profile(q, np.zeros(5), 1)


def test_stability_static_and_moving():
    q = IsotropicQuadratic(3)
    same = [np.zeros(3)] * 4
    assert probes.projected_slice_stability(q, same, [1, 0, 0]).index == 0.0
    # a translated quadratic has the same offset-normalized slice
    moved = [np.array([0.0, k, 0.0]) for k in range(4)]
    assert probes.projected_slice_stability(q, moved, [1, 0, 0]).index < 1e-12
    sep = SeparableValleyND.embed([PiecewiseValley1D(GradientBounds.tight(0.1, -1.0))], 1, 0)
    walk = [np.array([x]) for x in (-0.5, 0.5, 1.5)]
    st_ = probes.projected_slice_stability(sep, walk, [1.0])
    assert st_.index > 0
    with pytest.raises(ValueError):
        probes.projected_slice_stability(q, same[:1], [1, 0, 0])


def test_bn_compare_construction_and_swap():
    q = SeparableValleyND.embed([PiecewiseValley1D(GradientBounds.tight(0.1, -1.0))] * 2, 6, 0)
    m1 = np.array([1, 1, 1, 0, 0, 0], bool)
    m2 = ~m1
    a = probes.bn_direction_comparison(q, np.zeros(6), m1, m2, seeds=[0, 1, 2])
    b = probes.bn_direction_comparison(q, np.zeros(6), m2, m1, seeds=[0, 1, 2])
    np.testing.assert_allclose(a.c_bn, b.c_non_bn)
    np.testing.assert_allclose(a.c_non_bn, b.c_bn)
    assert len(a.rows()) == 3
    with pytest.raises(ValueError):
        probes.bn_direction_comparison(IsotropicQuadratic(6), np.zeros(6))


def test_network_loss_adapter():
    arch = nn.Architecture((2, 5, 2))
    data = nn.Dataset(n_train=40, n_test=60, seed=0)
    p = nn.init_params(arch, 0)
    L = probes.NetworkLoss(arch, data, "train")
    ev = nn.evaluate(arch, p, data)
    assert L.loss(p) == pytest.approx(ev.train_loss, abs=1e-12)
    assert L.recompute_events == 1
    L.loss(p.data * (1 + 1e-5))
    assert L.recompute_events == 1
    L.loss(p.data * 1.1)
    assert L.recompute_events == 2
    test = probes.NetworkLoss(arch, data, "test")
    assert test.loss(p) == pytest.approx(ev.test_loss, abs=1e-12)
    with pytest.raises(NotImplementedError):
        test.grad(p.data)
    bn, non = L.group_masks()
    res = probes.bn_direction_comparison(L, p, seeds=[0])
    assert len(res.c_bn) == 1 and bn.count == non.count


def test_thread_env(monkeypatch):
    monkeypatch.setenv("VALLEY_THREADS", "3")
    assert probes.n_workers() == 3
    monkeypatch.setenv("VALLEY_THREADS", "bogus")
    assert probes.n_workers() >= 1
    q = IsotropicQuadratic(4)
    a = probes.random_ray_profile(q, np.zeros(4), 8, seed=2)
    monkeypatch.setenv("VALLEY_THREADS", "1")
    b = probes.random_ray_profile(q, np.zeros(4), 8, seed=2)
    np.testing.assert_array_equal(a.values, b.values)
