"""SGD with bounded noise on 1D valleys, split into oscillation rounds.

A round starts at the first iterate on the flat side (``w >= 0``) after a
sharp-side iterate and ends just before the next such crossing. With
``start``/``end`` the iterate indices, ``length = end - start`` is the round's
``T_i`` (its iterates are ``w_0 .. w_{T_i}``).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_finite_scalar, make_rng
from .exceptions import (DivergenceError, InfeasibleHypothesesError, OscillationError,
                         TooFewRoundsError)
from . import theory

DIVERGENCE_LIMIT = 1e6
MIN_ROUNDS = 30
NOISE_KINDS = ("uniform", "clipped-gaussian", "zero")
Z99 = 2.5758293035489004


@dataclass(frozen=True)
class SGDConfig:
    eta: float
    nu: float = 0.0
    noise_kind: str = "uniform"
    steps: int = 1000
    seed: int = 0
    w_init: float = 1.0

    def __post_init__(self):
        if not check_finite_scalar(self.eta, "eta") > 0:
            raise ValueError("eta must be positive")
        if check_finite_scalar(self.nu, "nu") < 0:
            raise ValueError("nu must be >= 0")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {NOISE_KINDS}")
        if int(self.steps) < 0:
            raise ValueError("steps must be >= 0")
        check_finite_scalar(self.w_init, "w_init")

    def to_dict(self):
        return {"eta": self.eta, "nu": self.nu, "noise_kind": self.noise_kind,
                "steps": int(self.steps), "seed": int(self.seed), "w_init": self.w_init}


@dataclass
class Trajectory:
    positions: np.ndarray
    gradients: np.ndarray
    noises: np.ndarray
    seed: int
    config: SGDConfig

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class RoundSegment:
    start: int
    end: int
    length: int
    average: float
    sharp_dwell: int
    flat_dwell: int
    w0: float


def draw_noise(kind, nu, n, rng):
    """``n`` noise values with ``|omega| < nu`` strictly."""
    if kind == "zero" or nu == 0:
        return np.zeros(n)
    inner = np.nextafter(nu, 0.0)
    if kind == "uniform":
        x = rng.uniform(-nu, nu, size=n)
    else:
        x = rng.normal(0.0, nu / 2, size=n)
    return np.clip(x, -inner, inner)


def run_sgd(model, config: SGDConfig) -> Trajectory:
    """Iterate ``w <- w - eta (grad(w) + omega)`` for ``config.steps`` steps.

    Deterministic given ``config.seed``; raises :class:`DivergenceError` if an
    iterate leaves ``[-1e6, 1e6]``.
    """
    n = int(config.steps)
    noises = draw_noise(config.noise_kind, config.nu, n, make_rng(config.seed))
    positions = np.empty(n + 1)
    grads = np.empty(n)
    eta = float(config.eta)
    grad = model.grad
    w = float(config.w_init)
    positions[0] = w
    noise_list = noises.tolist()
    for t in range(n):
        g = grad(w)
        grads[t] = g
        w = w - eta * (g + noise_list[t])
        if not -DIVERGENCE_LIMIT <= w <= DIVERGENCE_LIMIT:
            raise DivergenceError(f"iterate {t + 1} left the safe range: {w}")
        positions[t + 1] = w
    return Trajectory(positions, grads, noises, int(config.seed), config)


def crossing_indices(positions):
    """Indices ``i`` with ``positions[i-1] < 0 <= positions[i]``."""
    pos = np.asarray(positions)
    neg = pos < 0
    return np.flatnonzero(neg[:-1] & ~neg[1:]) + 1


def segment_rounds(traj) -> list:
    """Rounds between consecutive sharp-to-flat crossings (possibly empty)."""
    pos = traj.positions if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    cross = crossing_indices(pos)
    rounds = []
    for s, nxt in zip(cross[:-1], cross[1:]):
        e = int(nxt) - 1
        seg = pos[s:e + 1]
        sharp = int(np.count_nonzero(seg < 0))
        rounds.append(RoundSegment(int(s), e, e - int(s), float(seg.mean()), sharp,
                                   len(seg) - sharp, float(seg[0])))
    return rounds


def start_violations(segments, p_min, p_max, tol=1e-12):
    """Indices of rounds whose first iterate lies outside ``[p_min, p_max]``."""
    return [i for i, s in enumerate(segments) if not p_min - tol <= s.w0 <= p_max + tol]


def _binomial(successes, n):
    p = successes / n
    return p, math.sqrt(p * (1 - p) / n)


@dataclass
class RoundStats:
    n_rounds: int
    mean_average: float
    stderr: float
    ci99: tuple
    frac_flat_ge_tmin: float | None = None
    frac_flat_ge_tmin_se: float | None = None
    frac_len_le_tmax: float | None = None
    frac_len_le_tmax_se: float | None = None
    frac_len_le_tmax_corrected: float | None = None
    frac_len_le_tmax_corrected_se: float | None = None
    sharp_dwell_hist: dict = field(default_factory=dict)
    lengths: tuple = ()


def round_statistics(segments, t_min=None, t_max=None, t_max_corrected=None) -> RoundStats:
    """Sample statistics of round averages and dwell times (needs >= 30 rounds)."""
    n = len(segments)
    if n < MIN_ROUNDS:
        raise TooFewRoundsError(f"need at least {MIN_ROUNDS} rounds, got {n}")
    avgs = np.array([s.average for s in segments])
    mean = float(avgs.mean())
    se = float(avgs.std(ddof=1) / math.sqrt(n))
    stats = RoundStats(n, mean, se, (mean - Z99 * se, mean + Z99 * se))
    stats.sharp_dwell_hist = dict(sorted(Counter(s.sharp_dwell for s in segments).items()))
    stats.lengths = tuple(s.length for s in segments)
    if t_min is not None:
        hits = sum(s.flat_dwell >= math.floor(t_min) for s in segments)
        stats.frac_flat_ge_tmin, stats.frac_flat_ge_tmin_se = _binomial(hits, n)
    if t_max is not None:
        hits = sum(s.length <= math.ceil(t_max) for s in segments)
        stats.frac_len_le_tmax, stats.frac_len_le_tmax_se = _binomial(hits, n)
    if t_max_corrected is not None:
        hits = sum(s.length <= math.ceil(t_max_corrected) for s in segments)
        stats.frac_len_le_tmax_corrected, stats.frac_len_le_tmax_corrected_se = _binomial(hits, n)
    return stats


def average_iterates(traj, burn_in=None):
    """Running and final mean of ``positions[burn_in:]``.

    ``burn_in`` defaults to the first sharp-to-flat crossing (0 if none).
    """
    pos = traj.positions if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if burn_in is None:
        cross = crossing_indices(pos)
        burn_in = int(cross[0]) if len(cross) else 0
    if not 0 <= burn_in < len(pos):
        raise ValueError(f"burn_in must be in [0, {len(pos)}), got {burn_in}")
    tail = pos[burn_in:]
    running = np.cumsum(tail) / np.arange(1, len(tail) + 1)
    return running, float(running[-1])


def run_trials(model, config, n_trials):
    """Independent trials with substream seeds mixed from ``(seed, trial)``.

    Results come back in trial order so any parallel map gives the same list.
    """
    out = []
    for i in range(n_trials):
        seed = int(np.random.SeedSequence([int(config.seed), i]).generate_state(1, np.uint64)[0])
        out.append(run_sgd(model, replace(config, seed=seed)))
    return out


def final_averages(model, config, n_trials, burn_in=None):
    """Final iterate average of each of ``n_trials`` seeded runs (see :func:`run_trials`)."""
    return np.array([average_iterates(t, burn_in)[1] for t in run_trials(model, config, n_trials)])


def oscillation_amplitude(model, eta):
    """Noise-free jump size ``eta * max |grad|`` of a two-sided piecewise-linear valley."""
    b = model.bounds
    return eta * max(b.a_plus, -b.b_minus)


@dataclass
class TheoremTwoReport:
    constants: theory.TheoremTwoConstants
    hypotheses: dict
    stats: RoundStats
    verdicts: dict
    supplementary: dict
    overridden: bool
    start_violations: int
    steps_used: int

    def to_dict(self):
        s = self.stats
        return {
            "constants": self.constants.to_dict(),
            "hypotheses": self.hypotheses,
            "overridden": self.overridden,
            "n_rounds": s.n_rounds,
            "mean_round_average": s.mean_average,
            "stderr": s.stderr,
            "ci99": list(s.ci99),
            "frac_flat_ge_tmin": s.frac_flat_ge_tmin,
            "frac_len_le_tmax": s.frac_len_le_tmax,
            "frac_len_le_tmax_corrected": s.frac_len_le_tmax_corrected,
            "sharp_dwell_hist": {str(k): v for k, v in s.sharp_dwell_hist.items()},
            "start_violations": self.start_violations,
            "steps_used": self.steps_used,
            "verdicts": self.verdicts,
            "supplementary": self.supplementary,
        }


def _rounds_for(model, config, n_rounds):
    bounds = model.bounds
    _, p_max = theory.compute_p_bounds(bounds, config.eta)
    per_round = p_max / (config.eta * bounds.b_plus) + 3
    steps = int(n_rounds * per_round * 1.1) + 2 * int(abs(config.w_init) / (config.eta * bounds.b_plus)) + 100
    for _ in range(20):
        traj = run_sgd(model, replace(config, steps=steps))
        rounds = segment_rounds(traj)
        if len(rounds) >= n_rounds:
            return traj, rounds[:n_rounds]
        steps *= 2
    raise TooFewRoundsError(f"only {len(rounds)} rounds after {steps} steps")


def verify_theorem_two(model, config: SGDConfig, n_rounds=5000, tau=None, override=False):
    """Check that round averages are positive and exceed ``c_0`` on average.

    Verdicts use 3-sigma one-sided margins: ``mean_positive`` requires
    ``mean - 3 se > 0``; ``exceeds_c0`` requires ``mean - 3 se > c_0`` and is
    ``None`` when the tau condition fails; the dwell verdicts compare
    empirical frequencies with ``1 - t/tau`` minus three binomial standard
    errors. ``supplementary`` repeats the round-length check with
    :func:`theory.compute_t_max_corrected`.
    """
    bounds = model.bounds.with_nu(config.nu)
    hyp = theory.theorem_two_hypothesis_check(bounds)
    if not hyp["holds"] and not override:
        raise InfeasibleHypothesesError(f"averaging-theorem hypotheses fail: {hyp}")
    consts = theory.theorem_two_constants(bounds, config.eta, tau)
    traj, rounds = _rounds_for(model, config, n_rounds)
    stats = round_statistics(rounds, consts.t_min, consts.t_max, consts.t_max_corrected)
    lower = stats.mean_average - 3 * stats.stderr
    tau_ok = consts.feasible["tau_condition"]
    flat_target = 1 - consts.t_min / consts.tau
    len_target = 1 - consts.t_max / consts.tau
    verdicts = {
        "mean_positive": bool(lower > 0),
        "exceeds_c0": bool(lower > consts.c_0) if tau_ok else None,
        "flat_dwell_bound": bool(stats.frac_flat_ge_tmin >= flat_target - 3 * stats.frac_flat_ge_tmin_se),
        "round_length_bound": bool(stats.frac_len_le_tmax >= len_target - 3 * stats.frac_len_le_tmax_se),
    }
    corr_target = 1 - consts.t_max_corrected / consts.tau
    supplementary = {
        "round_length_bound_corrected": bool(stats.frac_len_le_tmax_corrected
                                             >= corr_target - 3 * stats.frac_len_le_tmax_corrected_se),
    }
    viol = start_violations(rounds, consts.p_min, consts.p_max)
    return TheoremTwoReport(consts, hyp, stats, verdicts, supplementary, bool(override and not hyp["holds"]),
                            len(viol), len(traj) - 1)


@dataclass
class SmallLRScenarios:
    flat: Trajectory
    sharp: Trajectory
    flat_average: float
    sharp_average: float


def small_lr_scenarios(model, config: SGDConfig, flat_start=3.0, sharp_start=-0.3, steps=None):
    """Paired runs from each side with a learning rate too small to oscillate.

    ``steps`` defaults to the largest budget for which the noiseless
    sharp-side run stays negative. Raises :class:`OscillationError` if a
    noiseless reference run crosses the minimum.
    """
    if not flat_start > 0 > sharp_start:
        raise ValueError("need flat_start > 0 > sharp_start")
    b = model.bounds
    if steps is None:
        steps = max(1, math.ceil(-sharp_start / (config.eta * -b.b_minus)) - 1)
    for start in (flat_start, sharp_start):
        ref = run_sgd(model, replace(config, nu=0.0, noise_kind="zero", steps=steps, w_init=start))
        if np.any(np.sign(ref.positions) != np.sign(start)):
            raise OscillationError(f"noiseless run from {start} crosses the minimum within {steps} steps")
    flat = run_sgd(model, replace(config, steps=steps, w_init=flat_start))
    sharp = run_sgd(model, replace(config, steps=steps, w_init=sharp_start))
    return SmallLRScenarios(flat, sharp, average_iterates(flat, 0)[1], average_iterates(sharp, 0)[1])


def trajectory_rows(traj):
    """Rows ``(t, w, grad, noise)``; the last iterate has empty grad/noise."""
    n = len(traj.gradients)
    for t, w in enumerate(traj.positions):
        if t < n:
            yield t, w, traj.gradients[t], traj.noises[t]
        else:
            yield t, w, "", ""


def round_rows(segments):
    for i, s in enumerate(segments):
        yield i, s.start, s.end, s.length, s.average, s.sharp_dwell
