"""Closed-form constants behind the two bias theorems.

Notation follows the valley conventions of :mod:`asymvalley.valley_models`:
``a_plus``/``b_plus`` bound the flat-side gradient from above/below,
``a_minus``/``b_minus`` the sharp-side gradient, ``nu`` the noise, ``eta``
the learning rate and ``tau`` the confidence parameter of the dwell-time
bounds. Everything is evaluated in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive
from .exceptions import InfeasibleHypothesesError
from .valley_models import GradientBounds

MAX_TAU_EXPONENT = 64


@dataclass(frozen=True)
class TheoremTwoConstants:
    p_min: float
    p_max: float
    t_min: float
    t_max: float
    c_0: float
    tau: float
    eta: float
    feasible: dict = field(default_factory=dict)
    t_max_corrected: float | None = None

    def to_dict(self):
        return {"p_min": self.p_min, "p_max": self.p_max, "t_min": self.t_min,
                "t_max": self.t_max, "c_0": self.c_0, "tau": self.tau, "eta": self.eta,
                "feasible": dict(self.feasible), "t_max_corrected": self.t_max_corrected}


@dataclass(frozen=True)
class TheoremOneBound:
    """Lower bound ``sum_i (c_i - 1) l_i p_i / 2 - 2 k xi`` with side conditions."""

    k: int
    c: tuple
    p: tuple
    l: tuple
    xi: float
    bound_value: float
    lower_ok: tuple
    upper_ok: tuple | None

    @property
    def feasible(self):
        ok = all(self.lower_ok)
        if self.upper_ok is not None:
            ok = ok and all(self.upper_ok)
        return ok


def _log_term(tau):
    # sqrt(2) * log^{1/2}(2 tau), shared by both dwell bounds
    if tau <= 0.5:
        raise InfeasibleHypothesesError(f"tau must exceed 1/2, got {tau}")
    return math.sqrt(2.0 * math.log(2.0 * tau))


def compute_p_bounds(bounds: GradientBounds, eta):
    """First-iterate bounds of a round: ``(-eta (a- + a+ + 2 nu), -eta (b- - nu))``."""
    eta = check_positive(eta, "eta")
    b = bounds
    p_min = -eta * (b.a_minus + b.a_plus + 2 * b.nu)
    p_max = -eta * (b.b_minus - b.nu)
    return p_min, p_max


def lemma_t_min_slack(bounds, eta, tau, t):
    """``p_min - t eta a+ - sqrt(2t) eta nu log^{1/2}(2 tau)``; non-negative up to ``t_min``."""
    p_min, _ = compute_p_bounds(bounds, eta)
    return p_min - t * eta * bounds.a_plus - math.sqrt(t) * eta * bounds.nu * _log_term(tau)


def lemma_t_max_slack(bounds, eta, tau, t):
    """``p_max - t eta b+ - sqrt(2t) eta nu log^{1/2}(2 tau)``; zero at ``t_max``."""
    _, p_max = compute_p_bounds(bounds, eta)
    return p_max - t * eta * bounds.b_plus - math.sqrt(t) * eta * bounds.nu * _log_term(tau)


def compute_t_min(bounds: GradientBounds, tau):
    """Probable lower bound on the flat-side dwell of one round.

    Raises :class:`InfeasibleHypothesesError` unless ``a- + a+ + 2 nu < 0``,
    i.e. unless a sharp-to-flat jump lands strictly on the flat side.
    """
    tau = check_positive(tau, "tau")
    b = bounds
    s = b.a_minus + b.a_plus + 2 * b.nu
    if s >= 0:
        raise InfeasibleHypothesesError(
            f"a_minus + a_plus + 2 nu = {s} must be negative for a positive t_min")
    q = b.nu * _log_term(tau)
    radicand = q * q - 4 * b.a_plus * s
    if radicand < 0:
        raise InfeasibleHypothesesError(f"negative radicand {radicand}")
    root = (-q + math.sqrt(radicand)) / (2 * b.a_plus)
    t_min = root * root
    # the defining lemma must hold at every integer t <= t_min
    t = math.floor(t_min)
    if lemma_t_min_slack(bounds, 1.0, tau, t) < -1e-12:
        raise AssertionError(f"lemma inequality fails at t={t}")
    return t_min


def compute_t_max(bounds: GradientBounds, tau):
    """Dwell-time constant ``T_max`` in closed form.

    It is the root of ``p_max - T eta b+ - sqrt(2T) eta nu log^{1/2}(2 tau) = 0``
    and never exceeds ``-(b- - nu) / b+``.
    """
    tau = check_positive(tau, "tau")
    b = bounds
    q = b.nu * _log_term(tau)
    radicand = q * q - 4 * (b.b_minus - b.nu) * b.b_plus
    root = (-q + math.sqrt(radicand)) / (2 * b.b_plus)
    t_max = root * root
    cap = -(b.b_minus - b.nu) / b.b_plus
    if t_max > cap * (1 + 1e-12):
        raise AssertionError(f"t_max={t_max} exceeds {cap}")
    return t_max


def compute_t_max_corrected(bounds: GradientBounds, tau):
    """Root of ``p_max - T eta b+ + sqrt(2T) eta nu log^{1/2}(2 tau) = 0``.

    Leaving the flat side by step ``T`` with probability ``1 - 1/(2 tau)``
    needs the noise term with a plus sign: the iterate is at most
    ``w0 - T eta b+ + sqrt(2T) eta nu log^{1/2}(2 tau)``. :func:`compute_t_max`
    keeps the reference closed form, whose minus sign gives a value that
    simulated rounds routinely exceed when ``nu > 0``. Both agree at ``nu = 0``.
    """
    tau = check_positive(tau, "tau")
    b = bounds
    q = b.nu * _log_term(tau)
    root = (q + math.sqrt(q * q - 4 * (b.b_minus - b.nu) * b.b_plus)) / (2 * b.b_plus)
    return root * root


def tau_condition(t_min, t_max, tau):
    """The ``(t_min + t_max) / tau <= 1/2`` requirement on ``tau``."""
    return (t_min + t_max) / tau <= 0.5


def t_min_two_tau_cap(bounds: GradientBounds):
    """Largest ``tau`` keeping ``t_min >= 2`` per the sufficient condition
    ``tau <= exp(((c - 3) a+ / (2 nu) - 1)^2) / 2``; ``inf`` when ``nu = 0``.

    Only meaningful when ``(c - 3) a+ / (2 nu) >= 1``; otherwise ``nan``.
    """
    b = bounds
    if b.nu == 0:
        return math.inf
    x = (b.c - 3) * b.a_plus / (2 * b.nu) - 1
    if x < 0:
        return math.nan
    try:
        return math.exp(x * x) / 2
    except OverflowError:
        return math.inf


def choose_tau(bounds: GradientBounds):
    """Smallest power of two ``tau`` with ``2 (t_min(tau) + t_max(tau)) <= tau``.

    ``t_min + t_max`` is non-increasing in ``tau`` so the scan stops at the
    first hit; fails after ``2**64``.
    """
    for e in range(1, MAX_TAU_EXPONENT + 1):
        tau = float(2 ** e)
        if tau_condition(compute_t_min(bounds, tau), compute_t_max(bounds, tau), tau):
            return tau
    raise InfeasibleHypothesesError("no tau <= 2**64 satisfies (t_min + t_max)/tau <= 1/2")


def compute_c0(bounds: GradientBounds, eta, tau):
    """``c_0 = t_min^2 / (2 t_max) * eta * a+`` and whether the tau condition holds."""
    eta = check_positive(eta, "eta")
    t_min = compute_t_min(bounds, tau)
    t_max = compute_t_max(bounds, tau)
    c_0 = t_min * t_min / (2 * t_max) * eta * bounds.a_plus
    return c_0, tau_condition(t_min, t_max, tau)


def theorem_two_constants(bounds: GradientBounds, eta, tau=None) -> TheoremTwoConstants:
    """All averaging-theorem constants; ``tau`` defaults to :func:`choose_tau`."""
    if tau is None:
        tau = choose_tau(bounds)
    p_min, p_max = compute_p_bounds(bounds, eta)
    t_min = compute_t_min(bounds, tau)
    t_max = compute_t_max(bounds, tau)
    c_0, ok = compute_c0(bounds, eta, tau)
    cap = t_min_two_tau_cap(bounds)
    feasible = {
        "tau_condition": bool(ok),
        "t_min_at_least_two_cap": bool(tau <= cap) if not math.isnan(cap) else False,
        "t_min_at_least_one": bool(t_min >= 1),
        "hypotheses": theorem_two_hypothesis_check(bounds)["holds"],
    }
    return TheoremTwoConstants(p_min, p_max, t_min, t_max, c_0, float(tau), float(eta), feasible,
                               compute_t_max_corrected(bounds, tau))


def theorem_two_hypothesis_check(bounds: GradientBounds):
    """Per-condition report on the averaging theorem's hypotheses.

    ``c`` is not required to exceed any fixed threshold ("large" is left to
    the caller); the report only insists on ``c > 1``.
    """
    b = bounds
    c = b.c
    c_prime = -(b.b_minus - b.nu) / b.b_plus
    try:
        c_prime_cap = math.exp(c / 3) / 6
    except OverflowError:
        c_prime_cap = math.inf
    report = {
        "c": c,
        "c_prime": c_prime,
        "c_prime_cap": c_prime_cap,
        "asymmetric": c > 1,
        "c_prime_ok": c_prime < c_prime_cap,
        "nu_ok": b.nu <= b.a_plus,
        "sharp_jump_lands_flat": b.a_minus + b.a_plus + 2 * b.nu < 0,
    }
    report["holds"] = bool(report["asymmetric"] and report["c_prime_ok"] and report["nu_ok"]
                           and report["sharp_jump_lands_flat"])
    return report


def theorem_one_lower_bound(c, p, l, xi=0.0, r=None, zeta=None, delta_bar=None) -> TheoremOneBound:
    """Expected-population-loss improvement guaranteed by biasing ``l_i`` along each
    asymmetric direction.

    The lower side condition ``l_i > 4 xi / ((c_i - 1) p_i)`` is always
    checked. The upper one is checked when ``r``, ``zeta`` and ``delta_bar``
    are given, as ``l_i <= min(r - delta_bar_i, delta_bar_i - zeta)``: both
    halves are needed for the bias to stay inside the asymmetric range on
    either shift sign.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    l = np.atleast_1d(np.asarray(l, dtype=float))
    k = len(c)
    if k < 1 or len(p) != k or len(l) != k:
        raise ValueError("c, p and l must have the same positive length")
    if np.any(c <= 1) or np.any(p <= 0):
        raise ValueError("need c_i > 1 and p_i > 0")
    if xi < 0:
        raise ValueError("xi must be >= 0")
    bound = float(np.sum((c - 1) * l * p) / 2 - 2 * k * xi)
    lower_ok = tuple(bool(x) for x in l > 4 * xi / ((c - 1) * p))
    upper_ok = None
    if r is not None and zeta is not None and delta_bar is not None:
        r = np.broadcast_to(np.asarray(r, dtype=float), (k,))
        zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (k,))
        db = np.broadcast_to(np.asarray(delta_bar, dtype=float), (k,))
        upper_ok = tuple(bool(x) for x in l <= np.minimum(r - db, db - zeta))
    return TheoremOneBound(k, tuple(c), tuple(p), tuple(l), float(xi), bound, lower_ok, upper_ok)
