"""Empirical-vs-population shift model and the biased-solution gain.

The population loss ``L`` is a :class:`SeparableValleyND` minimized at its
base point with value 0. For a sign pattern ``s`` the empirical loss is

    L_hat_s(x) = L(x + delta_s) + pert(x),   delta_s = sum_i s_i delta_bar_i u_i

with ``pert`` a separable, non-negative bump sum whose sup-norm is at most
``xi``. Then ``min L_hat_s`` lies in ``[0, xi]`` and the shift gap of the pair
is at most ``xi`` everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from ._validation import check_vector, make_rng
from .exceptions import BudgetExceededError
from .theory import theorem_one_lower_bound
from .valley_models import SeparableValleyND

MAX_ENUM_K = 20
GAP_RTOL = 1e-9
_CHUNK = 1 << 16


# --- shift gaps -----------------------------------------------------------

@dataclass(frozen=True)
class BallGrid:
    """Deterministic sample of offsets ``v`` with ``||v|| <= R``.

    Points: the origin, ``n_line`` evenly spaced offsets along each of
    ``directions`` (defaults to the coordinate axes when ``dim <= 16``), and
    ``n_random`` seeded uniform draws from the ball.
    """

    n_line: int = 41
    n_random: int = 200
    seed: int = 0
    directions: np.ndarray | None = None

    def offsets(self, dim, R):
        pts = [np.zeros((1, dim))]
        if R > 0:
            dirs = self.directions
            if dirs is None and dim <= 16:
                dirs = np.eye(dim)
            if dirs is not None:
                dirs = np.atleast_2d(dirs)
                dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
                ls = np.linspace(-R, R, self.n_line)
                pts.append((ls[:, None, None] * dirs[None]).reshape(-1, dim))
            if self.n_random:
                rng = make_rng(self.seed)
                g = rng.standard_normal((self.n_random, dim))
                g /= np.linalg.norm(g, axis=1, keepdims=True)
                rad = R * rng.random(self.n_random) ** (1.0 / dim)
                pts.append(g * rad[:, None])
        return np.vstack(pts)

    def describe(self, dim, R):
        return {"n_line": self.n_line, "n_random": self.n_random, "seed": self.seed,
                "n_points": int(len(self.offsets(dim, R))), "radius": R,
                "note": "grid maximum (a lower bound on the supremum over the ball)"}


@dataclass
class ShiftGapResult:
    delta: np.ndarray
    gap: float
    grid: dict
    ratio: float | None = None
    minima_method: str = "grid"


def shift_gap(L, L_hat, w, delta, R, grid: BallGrid | None = None, minima=None) -> ShiftGapResult:
    """Grid maximum over ``v`` in ``B(R)`` of ``|L'(w + v + delta) - L_hat(w + v)|``.

    ``L' = L - min L + min L_hat``. The two minima are either given as
    ``minima=(min_L, min_L_hat)`` or estimated on the same grid (``min L``
    over ``w + v + delta``, ``min L_hat`` over ``w + v``).
    """
    if R < 0:
        raise ValueError("R must be >= 0")
    w = check_vector(w, "w")
    delta = check_vector(delta, "delta", len(w))
    grid = grid or BallGrid()
    V = grid.offsets(len(w), R)
    lv = np.array([L(w + v + delta) for v in V])
    hv = np.array([L_hat(w + v) for v in V])
    if minima is None:
        min_l, min_h, method = lv.min(), hv.min(), "grid"
    else:
        (min_l, min_h), method = minima, "given"
    gap = float(np.max(np.abs(lv - min_l + min_h - hv)))
    return ShiftGapResult(delta, gap, grid.describe(len(w), R), None, method)


@dataclass
class ShiftScan:
    deltas: np.ndarray
    gaps: np.ndarray
    gap_zero: float
    ratios: np.ndarray | None
    argmin: float
    gap_at_argmin: float
    degenerate: bool


def scan_shift(L, L_hat, w, direction, delta_range=(-1.0, 1.0), steps=201, R=1.0,
               grid: BallGrid | None = None, minima=None) -> ShiftScan:
    """Shift gap for ``delta = t * direction`` over a grid of ``t``.

    Ratios ``gap / gap_0`` are returned unless ``gap_0`` is 0, in which case
    ``degenerate`` is set and only absolute gaps are reported.
    """
    u = check_vector(direction, "direction")
    u = u / np.linalg.norm(u)
    ts = np.linspace(delta_range[0], delta_range[1], steps)
    gaps = np.array([shift_gap(L, L_hat, w, t * u, R, grid, minima).gap for t in ts])
    g0 = shift_gap(L, L_hat, w, 0.0 * u, R, grid, minima).gap
    i = int(np.argmin(gaps))
    degenerate = g0 == 0
    return ShiftScan(ts, gaps, g0, None if degenerate else gaps / g0, float(ts[i]), float(gaps[i]), degenerate)


# --- the shift model ------------------------------------------------------

def _bump(x):
    # C^1 bump, 1 at 0, support (-1, 1)
    y = np.clip(1.0 - x * x, 0.0, None)
    return y * y


@dataclass(frozen=True)
class SeparablePerturbation:
    """``pert(t) = sum_i amp_i * sum_j a_ij * bump((t_i - c_ij) / width_i)``.

    Weights satisfy ``a_ij >= 0`` and ``sum_j a_ij <= 1`` so every axis term
    lies in ``[0, amp_i]`` and the total in ``[0, sum_i amp_i]``.
    """

    amplitudes: np.ndarray
    centers: np.ndarray
    weights: np.ndarray
    widths: np.ndarray

    @classmethod
    def random(cls, k, xi, span, seed, n_bumps=4, width=0.5):
        rng = make_rng(seed, 1)
        span = np.broadcast_to(np.asarray(span, dtype=float), (k,))
        centers = (2 * rng.random((k, n_bumps)) - 1) * span[:, None]
        w = rng.random((k, n_bumps))
        w /= w.sum(axis=1, keepdims=True)
        return cls(np.full(k, xi / k), centers, w, np.full(k, float(width)))

    def grad_bounds(self):
        """Per-axis bound on ``|d pert_i / d t|`` (the bump's slope peaks at 8 / (3 sqrt 3))."""
        return self.amplitudes * self.weights.sum(axis=1) * (8 / (3 * math.sqrt(3))) / self.widths

    @property
    def sup_norm(self):
        return float(np.sum(self.amplitudes * self.weights.sum(axis=1)))

    def axis(self, i, t):
        t = np.asarray(t, dtype=float)
        z = (t[..., None] - self.centers[i]) / self.widths[i]
        return self.amplitudes[i] * np.sum(self.weights[i] * _bump(z), axis=-1)

    def __call__(self, t):
        return float(sum(self.axis(i, ti) for i, ti in enumerate(t)))


@dataclass
class ShiftModel:
    population: SeparableValleyND
    delta_bar: np.ndarray
    xi: float
    perturbation: SeparablePerturbation | None
    R: float
    r: np.ndarray
    zeta: np.ndarray
    _minimizers: dict = field(default_factory=dict, repr=False)

    @property
    def k(self):
        return self.population.k

    def shift_vector(self, signs):
        return (np.asarray(signs, dtype=float) * self.delta_bar) @ self.population.directions

    def population_loss(self, x):
        return self.population.loss(x)

    def _pert_axis(self, i, t):
        return 0.0 if self.perturbation is None else float(self.perturbation.axis(i, t))

    def _axis_empirical(self, i, sign, t):
        return self.population.axis_losses[i].loss(t + sign * self.delta_bar[i]) + self._pert_axis(i, t)

    def empirical_loss(self, x, signs):
        t = self.population.project(x)
        return float(sum(self._axis_empirical(i, s, ti) for i, (s, ti) in enumerate(zip(signs, t))))

    def axis_minimizer(self, i, sign):
        """Minimizer of the ``i``-th axis term of ``L_hat`` for shift sign ``sign``."""
        key = (i, int(sign))
        if key not in self._minimizers:
            t0 = -sign * self.delta_bar[i]
            if self.xi == 0 or self.perturbation is None:
                self._minimizers[key] = float(t0)
            else:
                self._minimizers[key] = self._numeric_min(i, sign, t0)
        return self._minimizers[key]

    def _numeric_min(self, i, sign, t0):
        f = self.population.axis_losses[i]
        # L_hat >= L(t + delta) >= slope * |t - t0| outside the dead zone, so the
        # minimizer sits within xi / min-slope (+ dead zone) of t0
        b = f.bounds
        half = self.xi / min(b.b_plus, -b.a_minus) + getattr(f, "dead_zone", 0.0) + 1e-9
        ts = np.linspace(t0 - half, t0 + half, 4001)
        vals = np.asarray(f.loss(ts + sign * self.delta_bar[i]), dtype=float) + self.perturbation.axis(i, ts)
        j = int(np.argmin(vals))
        lo, hi = ts[max(j - 1, 0)], ts[min(j + 1, len(ts) - 1)]
        res = minimize_scalar(lambda t: self._axis_empirical(i, sign, t), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-10})
        return float(res.x) if res.fun <= vals[j] else float(ts[j])

    def empirical_minimizer(self, signs):
        t = [self.axis_minimizer(i, s) for i, s in enumerate(signs)]
        return self.population.point(np.array(t))

    def empirical_min_value(self, signs):
        return float(sum(self._axis_empirical(i, s, self.axis_minimizer(i, s)) for i, s in enumerate(signs)))

    def measured_gap(self, signs, n_points=1000, seed=0):
        """Grid shift gap of pattern ``signs`` around its empirical minimizer."""
        signs = np.asarray(signs)
        w = self.empirical_minimizer(signs)
        d = self.population.dim
        grid = BallGrid(n_line=max(2, n_points // (2 * d)), n_random=n_points // 2, seed=seed,
                        directions=np.vstack([self.population.directions, np.eye(d)]) if d <= 16 else self.population.directions)
        return shift_gap(self.population_loss, lambda x: self.empirical_loss(x, signs), w,
                         self.shift_vector(signs), self.R, grid,
                         minima=(0.0, self.empirical_min_value(signs)))


def build_shift_pair(valley: SeparableValleyND, delta_bar, xi=0.0, seed=0, R=None, r=np.inf,
                     zeta=None, n_bumps=4, width=0.5) -> ShiftModel:
    """Realize the random-shift assumption on ``valley``.

    ``zeta`` defaults to each axis loss's dead zone. Requires
    ``zeta_i <= delta_bar_i <= r_i``.
    """
    k = valley.k
    db = np.broadcast_to(np.asarray(delta_bar, dtype=float), (k,)).copy()
    if zeta is None:
        zeta = [getattr(f, "dead_zone", 0.0) for f in valley.axis_losses]
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (k,)).copy()
    r = np.broadcast_to(np.asarray(r, dtype=float), (k,)).copy()
    if np.any(db < zeta) or np.any(db > r):
        raise ValueError(f"need zeta <= delta_bar <= r, got delta_bar={db}")
    if xi < 0:
        raise ValueError("xi must be >= 0")
    if R is None:
        R = float(np.linalg.norm(db))
    pert = None
    if xi > 0:
        pert = SeparablePerturbation.random(k, xi, db + R, seed, n_bumps, width)
    return ShiftModel(valley, db, float(xi), pert, float(R), r, zeta)


# --- expected losses over the shift signs ---------------------------------

@dataclass
class ExpectedLosses:
    at_minimizer: float
    at_biased: float
    gap: float
    bound: object
    n_patterns: int
    stderr: float | None = None

    @property
    def gap_ge_bound(self):
        """Gap at least the bound, up to float rounding (and 3 standard errors
        for sampled estimates)."""
        b = self.bound.bound_value
        slack = GAP_RTOL * max(1.0, abs(b), abs(self.at_minimizer))
        if self.stderr is not None:
            slack += 3 * self.stderr
        return bool(self.gap + slack >= b)

    def to_dict(self):
        b = self.bound
        return {"at_minimizer": self.at_minimizer, "at_biased": self.at_biased, "gap": self.gap,
                "stderr": self.stderr, "n_patterns": self.n_patterns,
                "bound": b.bound_value, "bound_feasible": b.feasible,
                "gap_ge_bound": self.gap_ge_bound}


def _axis_tables(model, l):
    """Per-axis population losses at the minimizer and biased point, index 0 = -delta_bar."""
    k = model.k
    A = np.empty((k, 2))
    B = np.empty((k, 2))
    for i, f in enumerate(model.population.axis_losses):
        for b, s in ((0, -1), (1, 1)):
            t = model.axis_minimizer(i, s)
            A[i, b] = f.loss(t)
            B[i, b] = f.loss(t + l[i])
    return A, B


def certified_constants(model: ShiftModel):
    """Asymmetry constants ``(p, c, zeta, r)`` per axis that provably hold for
    every ``L_hat_s`` around its own minimizer.

    The perturbation's slope bound ``g`` loosens the slopes to ``a+ + g`` and
    ``|a-| - g``; the minimizer's offset ``e`` from the kink widens the dead
    zone and shrinks ``r`` by ``max |e|``. With ``xi = 0`` these are the
    population's own constants.
    """
    k = model.k
    g = np.zeros(k) if model.perturbation is None else model.perturbation.grad_bounds()
    p = np.empty(k)
    c = np.empty(k)
    shift = np.empty(k)
    for i, f in enumerate(model.population.axis_losses):
        b = f.bounds
        p[i] = b.a_plus + g[i]
        c[i] = (-b.a_minus - g[i]) / p[i]
        shift[i] = max(abs(model.axis_minimizer(i, s) + s * model.delta_bar[i]) for s in (-1, 1))
    return p, c, model.zeta + shift, model.r - shift


def _bound_for(model, l):
    p, c, zeta, r = certified_constants(model)
    if np.any(c <= 1):
        raise ValueError("perturbation too steep: certified asymmetry ratio <= 1")
    return theorem_one_lower_bound(c, p, l, model.xi, r, zeta, model.delta_bar)


def enumerate_expected_losses(model: ShiftModel, bias) -> ExpectedLosses:
    """Exact averages of ``L`` at ``w*_s`` and ``w*_s + sum_i l_i u_i`` over all
    ``2^k`` sign patterns (pattern ``j`` takes ``+delta_bar_i`` when bit ``i`` is set).

    The reported bound uses :func:`certified_constants`.
    """
    k = model.k
    if k > MAX_ENUM_K:
        raise BudgetExceededError(f"k={k} exceeds the enumeration budget {MAX_ENUM_K}")
    l = np.broadcast_to(np.asarray(bias, dtype=float), (k,))
    A, B = _axis_tables(model, l)
    n = 1 << k
    tot_a = tot_b = 0.0
    idx = np.arange(k)
    for lo in range(0, n, _CHUNK):
        j = np.arange(lo, min(lo + _CHUNK, n), dtype=np.int64)
        bits = (j[:, None] >> idx) & 1
        tot_a += float(A[idx, bits].sum())
        tot_b += float(B[idx, bits].sum())
    ea, eb = tot_a / n, tot_b / n
    return ExpectedLosses(ea, eb, ea - eb, _bound_for(model, l), n)


def monte_carlo_expected_losses(model: ShiftModel, bias, n_samples, seed=0) -> ExpectedLosses:
    """Unbiased sign-sampling estimate of :func:`enumerate_expected_losses`."""
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    k = model.k
    l = np.broadcast_to(np.asarray(bias, dtype=float), (k,))
    A, B = _axis_tables(model, l)
    bits = make_rng(seed).integers(0, 2, size=(n_samples, k))
    idx = np.arange(k)
    va = A[idx, bits].sum(axis=1)
    vb = B[idx, bits].sum(axis=1)
    diff = va - vb
    se = float(diff.std(ddof=1) / math.sqrt(n_samples))
    return ExpectedLosses(float(va.mean()), float(vb.mean()), float(diff.mean()),
                          _bound_for(model, l), n_samples, se)
