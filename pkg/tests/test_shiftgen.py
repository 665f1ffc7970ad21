import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymvalley.exceptions import BudgetExceededError
from asymvalley.shiftgen import (BallGrid, SeparablePerturbation, build_shift_pair, certified_constants,
                                 enumerate_expected_losses, monte_carlo_expected_losses, scan_shift, shift_gap)
from asymvalley.valley_models import GradientBounds, IsotropicQuadratic, PiecewiseValley1D, SeparableValleyND


def valley(k=1, dim=None, a_p=0.1, a_m=-0.5, seed=0):
    axes = [PiecewiseValley1D(GradientBounds.tight(a_p, a_m))] * k
    return SeparableValleyND.embed(axes, dim or k, seed)


def test_ball_grid_radius_and_determinism():
    g = BallGrid(11, 50, seed=4)
    V = g.offsets(5, 2.0)
    assert np.all(np.linalg.norm(V, axis=1) <= 2.0 + 1e-12)
    np.testing.assert_array_equal(V, g.offsets(5, 2.0))
    assert len(V) == 1 + 11 * 5 + 50
    assert BallGrid().offsets(3, 0.0).shape == (1, 3)


def test_shift_gap_exact_shift_is_zero():
    q = IsotropicQuadratic(3)
    d = np.array([0.3, -0.2, 0.1])
    res = shift_gap(q.loss, lambda x: q.loss(x + d), np.zeros(3), d, 1.0)
    assert res.gap < 1e-15
    assert shift_gap(q.loss, lambda x: q.loss(x + d), np.zeros(3), np.zeros(3), 1.0).gap > 0.1
    with pytest.raises(ValueError):
        shift_gap(q.loss, q.loss, np.zeros(3), np.zeros(3), -1)


def test_scan_degenerate():
    q = IsotropicQuadratic(2)
    s = scan_shift(q.loss, q.loss, np.zeros(2), [1, 0], steps=21)
    assert s.degenerate and s.ratios is None and s.argmin == 0.0


def test_theorem_one_example_k2():
    m = build_shift_pair(valley(2, 4), 2.0)
    res = enumerate_expected_losses(m, 1.0)
    assert res.gap == pytest.approx(0.4, abs=1e-12)
    assert res.n_patterns == 4 and res.gap_ge_bound


def test_zero_noise_minimizers_and_gaps():
    m = build_shift_pair(valley(2, 3), [1.0, 1.5])
    for signs in itertools.product((-1, 1), repeat=2):
        w = m.empirical_minimizer(signs)
        np.testing.assert_allclose(m.population.project(w), -np.array(signs) * [1.0, 1.5], atol=1e-15)
        assert m.measured_gap(signs, 200).gap < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.floats(0.001, 0.02), st.integers(0, 100))
def test_gap_within_xi_and_bound_holds(k, xi, seed):
    m = build_shift_pair(valley(k, k + 1, 0.2, -2.0, seed), 2.0, xi, seed=seed)
    for signs in itertools.product((-1, 1), repeat=k):
        assert m.measured_gap(signs, 200).gap <= xi + 1e-12
    p, c, zeta, r = certified_constants(m)
    assert np.all(p >= 0.2) and np.all(c > 1)
    l = np.minimum(r - 2.0, 2.0 - zeta) * 0.9
    res = enumerate_expected_losses(m, l)
    assert res.bound.feasible
    assert res.gap_ge_bound


def test_perturbation_properties():
    pert = SeparablePerturbation.random(3, 0.03, 2.0, seed=1)
    t = np.linspace(-3, 3, 2001)
    for i in range(3):
        v = pert.axis(i, t)
        assert np.all(v >= 0) and np.all(v <= 0.01 + 1e-15)
        slope = np.max(np.abs(np.diff(v) / np.diff(t)))
        assert slope <= pert.grad_bounds()[i] * (1 + 1e-6)
    assert pert.sup_norm == pytest.approx(0.03)


def test_monte_carlo_agrees_with_enumeration():
    m = build_shift_pair(valley(3, 3), 1.5)
    exact = enumerate_expected_losses(m, 0.5)
    mc = monte_carlo_expected_losses(m, 0.5, 20000, seed=3)
    assert abs(mc.gap - exact.gap) <= 4 * mc.stderr + 1e-12
    with pytest.raises(ValueError):
        monte_carlo_expected_losses(m, 0.5, 10)


def test_enumeration_budget():
    m = build_shift_pair(valley(21, 21), 1.0)
    with pytest.raises(BudgetExceededError):
        enumerate_expected_losses(m, 0.5)


def test_build_validation():
    with pytest.raises(ValueError):
        build_shift_pair(valley(1), 2.0, r=1.0)
    with pytest.raises(ValueError):
        build_shift_pair(valley(1), 1.0, -0.1)


def test_to_dict_fields():
    d = enumerate_expected_losses(build_shift_pair(valley(1), 2.0), 1.0).to_dict()
    assert d["gap_ge_bound"] and d["bound_feasible"] and d["n_patterns"] == 2
