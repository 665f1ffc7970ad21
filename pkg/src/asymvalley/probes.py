"""Landscape probes over anything with a ``loss(x)`` (and optionally ``grad(x)``).

Models are flat-vector functions. 1-D valleys from :mod:`asymvalley.valley_models`
are wrapped automatically, and :class:`NetworkLoss` adapts a network from
:mod:`asymvalley.nn`. Centers may be arrays or :class:`~asymvalley.nn.ParamVector`.

Sign convention for a direction ``u`` at ``w``: the flat side is ``w + l u``
and the sharp side is ``w - l u`` for ``l`` in ``(zeta, r)``. The measured
flat slope is ``d/dl L(w + l u)`` and the sharp slope is ``u . grad L(w - l u)``.
Asymmetry holds when the largest flat slope is below ``p`` and the sharp
slope is below ``-c p`` everywhere, i.e. its smallest magnitude exceeds ``c p``.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_vector, make_rng
from .exceptions import LayoutMismatchError
from .shiftgen import scan_shift
from .valley_models import AsymmetrySpec, PiecewiseValley1D, SymmetricFunction1D

log = logging.getLogger(__name__)

DIRECTION_KINDS = ("random-0-1", "random-pm1", "random-gaussian", "inter-solution", "group-masked", "custom")
BUMP_RTOL = 0.02
HIT_C = 2.0


def n_workers():
    """Worker cap from ``VALLEY_THREADS`` (default: CPU count)."""
    v = os.environ.get("VALLEY_THREADS")
    if v:
        try:
            return max(1, int(v))
        except ValueError:
            log.warning("ignoring malformed VALLEY_THREADS=%r", v)
    return os.cpu_count() or 1


def _map(fn, items, model):
    # order-preserving; only fans out for models that declare themselves pure
    items = list(items)
    k = min(n_workers(), len(items))
    if k <= 1 or not getattr(model, "thread_safe", False):
        return [fn(x) for x in items]
    with ThreadPoolExecutor(k) as ex:
        return list(ex.map(fn, items))


# --- model adapters ------------------------------------------------------------

class _Scalar1D:
    thread_safe = True

    def __init__(self, f):
        self.f = f
        self.dim = 1

    def loss(self, x):
        return float(self.f.loss(float(np.asarray(x).reshape(-1)[0])))

    def grad(self, x):
        return np.array([float(self.f.grad(float(np.asarray(x).reshape(-1)[0])))])


def as_model(model):
    if isinstance(model, (PiecewiseValley1D, SymmetricFunction1D)):
        return _Scalar1D(model)
    if not hasattr(model, "loss"):
        raise TypeError("model needs a loss(x) method")
    return model


def _vec(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64).reshape(-1)


def _has_grad(model):
    return callable(getattr(model, "grad", None)) and getattr(model, "has_grad", True)


# --- directions ------------------------------------------------------------------

@dataclass(frozen=True)
class Direction:
    vector: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        v = check_vector(self.vector, "direction")
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("direction must be non-zero")
        if abs(n - 1) > 1e-12:
            v = v / n
        if self.kind not in DIRECTION_KINDS:
            raise ValueError(f"unknown direction kind {self.kind!r}")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self):
        return len(self.vector)

    @classmethod
    def between(cls, a, b):
        return cls(_vec(b) - _vec(a), "inter-solution")


def _mask_array(mask, d):
    m = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    if m.shape != (d,):
        raise LayoutMismatchError(f"mask of shape {m.shape} does not match dimension {d}")
    return m


def sample_direction(kind, d, seed=0, mask=None, base="random-0-1", stream=()) -> Direction:
    """Seeded random unit direction.

    ``random-0-1`` draws entries from U(0, 1), ``random-pm1`` from U(-1, 1)
    and ``random-gaussian`` from N(0, 1). ``group-masked`` draws ``base`` on
    the masked coordinates and zeros elsewhere.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = make_rng(seed, 21, *stream)
    draw = {"random-0-1": lambda n: rng.random(n),
            "random-pm1": lambda n: rng.uniform(-1.0, 1.0, n),
            "random-gaussian": lambda n: rng.standard_normal(n)}
    if kind == "group-masked":
        m = _mask_array(mask, d)
        if not m.any():
            raise ValueError("empty mask")
        if base not in draw:
            raise ValueError(f"unknown base distribution {base!r}")
        v = np.zeros(d)
        v[m] = draw[base](int(m.sum()))
    elif kind in draw:
        v = draw[kind](d)
    else:
        raise ValueError(f"cannot sample a {kind!r} direction")
    return Direction(v, kind)


def _dir(u, d=None):
    if not isinstance(u, Direction):
        u = Direction(u)
    if d is not None and u.dim != d:
        raise LayoutMismatchError(f"direction of dim {u.dim} vs center of dim {d}")
    return u


# --- slices ----------------------------------------------------------------------

@dataclass
class SliceProfile:
    offsets: np.ndarray
    values: np.ndarray
    direction: Direction | None = None
    center: np.ndarray | None = None
    second: np.ndarray | None = None
    nonfinite: np.ndarray | None = None

    def rows(self):
        if self.second is None:
            return [(float(l), float(v)) for l, v in zip(self.offsets, self.values)]
        return [(float(l), float(v), float(s)) for l, v, s in zip(self.offsets, self.values, self.second)]

    @property
    def header(self):
        return ["l", "loss"] if self.second is None else ["l", "loss", "second"]


def _eval_line(model, center, u, ls):
    def f(l):
        try:
            return float(model.loss(center + l * u))
        except (FloatingPointError, OverflowError, ValueError):
            return float("nan")
    return np.array(_map(f, ls, model))


def slice(model, center, u, l_range=(-3.0, 3.0), steps=61, second=None) -> SliceProfile:
    """``L(w + l u)`` on ``steps`` evenly spaced offsets; non-finite points are flagged."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if not l_range[0] < l_range[1]:
        raise ValueError("l_range must be increasing")
    model = as_model(model)
    w = _vec(center)
    u = _dir(u, len(w))
    ls = np.linspace(l_range[0], l_range[1], steps)
    vals = _eval_line(model, w, u.vector, ls)
    sec = _eval_line(as_model(second), w, u.vector, ls) if second is not None else None
    bad = ~np.isfinite(vals)
    if bad.any():
        log.warning("slice: %d non-finite loss values", int(bad.sum()))
    return SliceProfile(ls, vals, u, w, sec, bad)


# --- asymmetry classification ------------------------------------------------------

@dataclass
class AsymmetryVerdict:
    spec: AsymmetrySpec
    holds: bool
    flat_max_slope: float
    sharp_min_magnitude: float
    method: str
    step: float | None
    n_grid: int

    def to_dict(self):
        return {"spec": list(self.spec.as_tuple()), "holds": self.holds,
                "flat_max_slope": self.flat_max_slope, "sharp_min_magnitude": self.sharp_min_magnitude,
                "method": self.method, "step": self.step, "n_grid": self.n_grid}


def default_grid(zeta, r, n=32):
    """``n`` interior points of ``(zeta, r)``."""
    if n < 16:
        raise ValueError("the grid needs at least 16 points")
    return np.linspace(zeta, r, n + 2)[1:-1]


def _slopes(model, w, u, ls, r):
    """Flat slopes ``d/dl L(w + l u)`` and sharp slopes ``u . grad L(w - l u)``."""
    if _has_grad(model):
        flat = np.array([float(np.dot(model.grad(w + l * u), u)) for l in ls])
        sharp = np.array([float(np.dot(model.grad(w - l * u), u)) for l in ls])
        return flat, sharp, "exact-gradient", None
    spacing = float(np.min(np.diff(ls))) if len(ls) > 1 else r
    h = min(spacing, 1e-3 * r)

    def d(l):
        return (model.loss(w + (l + h) * u) - model.loss(w + (l - h) * u)) / (2 * h)

    flat = np.array(_map(d, ls, model))
    sharp = np.array(_map(d, -np.asarray(ls), model))
    return flat, sharp, "central-difference", h


def classify_direction(model, center, u, spec: AsymmetrySpec, grid=None) -> AsymmetryVerdict:
    """Check the ``(r, p, c, zeta)`` asymmetry of ``u`` at ``center`` on a grid over ``(zeta, r)``."""
    model = as_model(model)
    w = _vec(center)
    u = _dir(u, len(w))
    ls = default_grid(spec.zeta, spec.r) if grid is None else np.asarray(grid, dtype=float)
    if len(ls) < 16 or np.any(ls <= spec.zeta) or np.any(ls >= spec.r):
        raise ValueError("grid must have >= 16 points strictly inside (zeta, r)")
    flat, sharp, method, h = _slopes(model, w, u.vector, ls, spec.r)
    fmax = float(np.max(flat))
    smin = float(np.min(-sharp))
    holds = bool(fmax < spec.p and smin > spec.c * spec.p)
    return AsymmetryVerdict(spec, holds, fmax, smin, method, h, len(ls))


@dataclass(frozen=True)
class SpecPolicy:
    """How ``(r, zeta)`` are fixed when fitting a spec to a direction.

    ``scale="unit"`` uses ``r`` and ``zeta`` as given. ``"norm"`` multiplies
    them by the center's Euclidean norm. A number multiplies them by that value.
    """

    r: float = 3.0
    zeta: float = 0.5
    scale: object = "unit"
    n_grid: int = 32

    def resolve(self, center):
        if self.scale == "unit":
            s = 1.0
        elif self.scale == "norm":
            s = float(np.linalg.norm(_vec(center))) or 1.0
        else:
            s = float(self.scale)
        if not s > 0:
            raise ValueError("policy scale must be > 0")
        return self.r * s, self.zeta * s, s

    def to_dict(self):
        return {"r": self.r, "zeta": self.zeta, "scale": self.scale, "n_grid": self.n_grid}


@dataclass
class FittedSpec:
    r: float
    p: float
    c: float
    zeta: float
    flat_max_slope: float
    sharp_min_magnitude: float

    @property
    def hit(self):
        return bool(np.isfinite(self.c) and self.c > HIT_C)

    def as_spec(self):
        return AsymmetrySpec(self.r, self.p, self.c, self.zeta)

    def to_dict(self):
        return {"r": self.r, "p": self.p, "c": self.c, "zeta": self.zeta,
                "flat_max_slope": self.flat_max_slope, "sharp_min_magnitude": self.sharp_min_magnitude,
                "hit": self.hit}


def fit_direction_spec(model, center, u, policy: SpecPolicy | None = None) -> FittedSpec:
    """``p`` = measured flat max slope, ``c`` = sharp min magnitude / ``p``.

    ``c`` is the supremum of ratios for which the verdict holds at that ``p``.
    It is ``nan`` when the flat side does not rise (``p <= 0``).
    """
    policy = policy or SpecPolicy()
    model = as_model(model)
    w = _vec(center)
    u = _dir(u, len(w))
    r, zeta, _ = policy.resolve(w)
    ls = default_grid(zeta, r, policy.n_grid)
    flat, sharp, _, _ = _slopes(model, w, u.vector, ls, r)
    p = float(np.max(flat))
    smin = float(np.min(-sharp))
    c = smin / p if p > 0 else float("nan")
    return FittedSpec(r, p, c, zeta, p, smin)


@dataclass
class SearchResult:
    direction: Direction | None
    verdict: AsymmetryVerdict | None
    fitted: FittedSpec | None
    trials: list = field(default_factory=list)

    @property
    def found(self):
        return self.direction is not None

    @property
    def hit_rate(self):
        return float(np.mean([t.hit for t in self.trials])) if self.trials else float("nan")

    def to_dict(self):
        return {"found": self.found, "hit_rate": self.hit_rate, "n_trials": len(self.trials),
                "fitted": self.fitted.to_dict() if self.fitted else None,
                "verdict": self.verdict.to_dict() if self.verdict else None,
                "trial_c": [t.c for t in self.trials]}


def find_asymmetric_direction(model, center, policy: SpecPolicy | None = None, trials=20, seed=0,
                              kind="random-0-1", stop_at_first=False) -> SearchResult:
    """Search random directions for one with fitted ``c > 2``.

    All ``trials`` are fitted unless ``stop_at_first`` (hit rates need them).
    The first hit is returned, with its verdict checked at ``c`` just inside
    the fitted value.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    model = as_model(model)
    w = _vec(center)
    first = None
    fits = []
    for t in range(trials):
        u = sample_direction(kind, len(w), seed, stream=(t,))
        fit = fit_direction_spec(model, w, u, policy)
        fits.append(fit)
        if fit.hit and first is None:
            first = (u, fit)
            if stop_at_first:
                break
    if first is None:
        return SearchResult(None, None, None, fits)
    u, fit = first
    # verdict with a hair of slack so the strict inequalities can hold
    spec = AsymmetrySpec(fit.r, fit.p * (1 + 1e-9), max(1.0 + 1e-12, fit.c * (1 - 1e-6)), fit.zeta)
    return SearchResult(u, classify_direction(model, w, u, spec, default_grid(fit.zeta, fit.r, (policy or SpecPolicy()).n_grid)), fit, fits)


# --- neighborhood asymmetry ------------------------------------------------------

@dataclass
class NeighborhoodResult:
    holds_fraction: float
    verdicts: list
    offsets: np.ndarray
    mean_slice: np.ndarray
    slice_variance: np.ndarray
    R_prime: float

    def to_dict(self):
        return {"holds_fraction": self.holds_fraction, "n_samples": len(self.verdicts),
                "R_prime": self.R_prime, "max_slice_variance": float(np.max(self.slice_variance))}


def _ball(rng, n, d, R):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (R * rng.random(n) ** (1.0 / d))[:, None]


def verify_neighborhood_asymmetry(model, center, u, spec: AsymmetrySpec, R_prime, n_samples=100, seed=0,
                                  steps=41) -> NeighborhoodResult:
    """Check ``spec`` at ``center + v - <v, u> u`` for ``v`` uniform in the ball of radius ``R_prime``.

    Slices are taken over ``l`` in ``[-r, r]`` and offset by the loss at
    their own center, so the variance measures shape changes only.
    """
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10")
    if R_prime < 0:
        raise ValueError("R_prime must be >= 0")
    model = as_model(model)
    w = _vec(center)
    u = _dir(u, len(w))
    uv = u.vector
    V = _ball(make_rng(seed, 31), n_samples, len(w), R_prime) if R_prime > 0 else np.zeros((n_samples, len(w)))
    ls = np.linspace(-spec.r, spec.r, steps)
    verdicts, slices = [], []
    for v in V:
        x = w + v - np.dot(v, uv) * uv
        verdicts.append(classify_direction(model, x, u, spec))
        slices.append(_eval_line(model, x, uv, ls) - model.loss(x))
    S = np.array(slices)
    return NeighborhoodResult(float(np.mean([vd.holds for vd in verdicts])), verdicts, ls,
                              S.mean(axis=0), S.var(axis=0), float(R_prime))


# --- interpolation -----------------------------------------------------------------

@dataclass
class InterpolationResult:
    train: SliceProfile
    test: SliceProfile | None
    bump: dict

    def rows(self):
        if self.test is None:
            return [(float(t), float(v)) for t, v in zip(self.train.offsets, self.train.values)]
        return [(float(t), float(v), float(s)) for t, v, s in
                zip(self.train.offsets, self.train.values, self.test.values)]

    @property
    def header(self):
        return ["t", "train_loss"] if self.test is None else ["t", "train_loss", "test_loss"]


def detect_bump(ts, vals, rtol=BUMP_RTOL):
    """Largest excess of an interior (``0 < t < 1``) value over both endpoint values,
    compared with ``rtol`` times the profile's range."""
    ts = np.asarray(ts)
    vals = np.asarray(vals)
    i0 = int(np.flatnonzero(ts == 0.0)[0])
    i1 = int(np.flatnonzero(ts == 1.0)[0])
    inner = (ts > 0) & (ts < 1)
    ref = max(vals[i0], vals[i1])
    rng_ = float(np.nanmax(vals) - np.nanmin(vals))
    excess = float(np.max(vals[inner]) - ref) if inner.any() else 0.0
    tol = rtol * rng_
    return {"bump": bool(excess > tol and excess > 0), "excess": excess, "tolerance": tol,
            "t_at_max": float(ts[inner][np.argmax(vals[inner])]) if inner.any() else None}


def interpolate(model, params_a, params_b, t_range=(-0.5, 1.5), steps=41, second=None) -> InterpolationResult:
    """Loss along ``(1 - t) a + t b``; ``t = 0`` and ``t = 1`` are always on the grid,
    so the endpoint values equal the losses at ``a`` and ``b`` exactly."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if hasattr(params_a, "check_layout"):
        params_a.check_layout(params_b)
    a, b = _vec(params_a), _vec(params_b)
    if a.shape != b.shape:
        raise LayoutMismatchError("endpoint dimensions differ")
    model = as_model(model)
    ts = np.union1d(np.linspace(t_range[0], t_range[1], steps), [0.0, 1.0])

    def run(m):
        return np.array(_map(lambda t: float(m.loss((1 - t) * a + t * b)), ts, m))

    tr = run(model)
    u = Direction.between(a, b) if np.any(a != b) else None
    train = SliceProfile(ts, tr, u, a, None, ~np.isfinite(tr))
    test = None
    if second is not None:
        te = run(as_model(second))
        test = SliceProfile(ts, te, u, a, None, ~np.isfinite(te))
    bump = {"train": detect_bump(ts, tr)}
    if test is not None:
        bump["test"] = detect_bump(ts, test.values)
    return InterpolationResult(train, test, bump)


# --- random rays -----------------------------------------------------------------

@dataclass
class RayProfile:
    radii: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    values: np.ndarray

    def rows(self):
        return [(float(r), float(m), float(s)) for r, m, s in zip(self.radii, self.mean, self.stderr)]

    header = ["radius", "mean_loss", "stderr"]


def random_ray_profile(model, center, n_rays=50, radii=None, seed=0) -> RayProfile:
    """Mean loss over Gaussian unit directions as a function of distance from ``center``."""
    if n_rays < 2:
        raise ValueError("n_rays must be >= 2")
    model = as_model(model)
    w = _vec(center)
    radii = np.linspace(0.0, 1.0, 21) if radii is None else np.asarray(radii, dtype=float)
    rng = make_rng(seed, 41)
    U = rng.standard_normal((n_rays, len(w)))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    vals = np.array(_map(lambda u: _eval_line(model, w, u, radii), U, model))
    return RayProfile(radii, vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(n_rays), vals)


# --- projected slice stability -------------------------------------------------------

@dataclass
class StabilityResult:
    profiles: list
    index: float
    first_half_index: float

    def to_dict(self):
        return {"stability_index": self.index, "first_half_index": self.first_half_index,
                "n_checkpoints": len(self.profiles)}


def _max_pairwise(profiles):
    if len(profiles) < 2:
        return 0.0
    A = np.array(profiles)
    return float(np.max(np.abs(A[:, None, :] - A[None, :, :])))


def projected_slice_stability(model, checkpoints, u, l_range=(-1.0, 1.0), steps=41) -> StabilityResult:
    """Slices along a fixed ``u`` through successive checkpoints, each offset by its
    center's loss. The index is the largest pairwise sup-difference over the later
    half of the checkpoints (the first half's is reported alongside)."""
    if len(checkpoints) < 2:
        raise ValueError("need at least 2 checkpoints")
    model = as_model(model)
    profiles = []
    for ck in checkpoints:
        p = slice(model, ck, u, l_range, steps)
        p.values = p.values - model.loss(_vec(ck))
        profiles.append(p)
    n = len(profiles)
    half = n // 2
    later = [p.values for p in profiles[min(half, n - 2):]]
    early = [p.values for p in profiles[:max(half, 2)]]
    return StabilityResult(profiles, _max_pairwise(later), _max_pairwise(early))


# --- BN vs non-BN directions ------------------------------------------------------

@dataclass
class BNComparison:
    seeds: list
    c_bn: list
    c_non_bn: list
    fits_bn: list
    fits_non_bn: list

    def to_dict(self):
        return {"seeds": self.seeds, "c_bn": self.c_bn, "c_non_bn": self.c_non_bn,
                "frac_bn_greater": float(np.mean([a > b for a, b in zip(self.c_bn, self.c_non_bn)]))}

    def rows(self):
        return [(s, a, b) for s, a, b in zip(self.seeds, self.c_bn, self.c_non_bn)]

    header = ["seed", "c_bn", "c_non_bn"]


def bn_direction_comparison(model, center, bn_mask=None, non_bn_mask=None, seeds=(0,), policy=None,
                            base="random-0-1") -> BNComparison:
    """Fitted ``c`` for a BN-masked and a non-BN-masked random direction, paired by seed.

    Both directions are drawn from the same seed stream, so swapping the masks
    swaps the results. Masks default to the model's own groups when it has them.
    """
    model = as_model(model)
    w = _vec(center)
    if bn_mask is None or non_bn_mask is None:
        if not hasattr(model, "group_masks"):
            raise ValueError("masks are required for models without parameter groups")
        dm_bn, dm_non = model.group_masks()
        bn_mask = dm_bn if bn_mask is None else bn_mask
        non_bn_mask = dm_non if non_bn_mask is None else non_bn_mask
    mb, mn = _mask_array(bn_mask, len(w)), _mask_array(non_bn_mask, len(w))
    if not mb.any() or not mn.any():
        raise ValueError("empty group")
    seeds = list(seeds)
    fb, fn = [], []
    for s in seeds:
        fb.append(fit_direction_spec(model, w, sample_direction("group-masked", len(w), s, mb, base), policy))
        fn.append(fit_direction_spec(model, w, sample_direction("group-masked", len(w), s, mn, base), policy))
    return BNComparison(seeds, [f.c for f in fb], [f.c for f in fn], fb, fn)


# --- shift gaps ----------------------------------------------------------------------

def shift_gap_scan(L, L_hat, w, direction, delta_range=(-1.0, 1.0), steps=201, R=1.0, grid=None, minima=None):
    """Shift-gap curve along ``direction`` (see :func:`asymvalley.shiftgen.scan_shift`)."""
    u = _dir(direction).vector
    return scan_shift(L, L_hat, _vec(w), u, delta_range, steps, R, grid, minima)


# --- network adapter -------------------------------------------------------------------

class NetworkLoss:
    """Loss of an :mod:`asymvalley.nn` network as a function of its flat parameters.

    Evaluation is eval-mode. BN statistics come from a full pass over the
    training split and are recomputed whenever the probed point moves more than
    ``recompute_tol`` (relative norm) from where they were last computed. Every
    recompute is counted in ``recompute_events``. For the training split,
    ``grad`` is the exact gradient of the loss with freshly recomputed
    statistics (a full-batch training-mode gradient).
    """

    thread_safe = False

    def __init__(self, arch, data, split="train", recompute_tol=1e-3):
        from .nn import _splits

        if split not in ("train", "test"):
            raise ValueError("split must be 'train' or 'test'")
        self.arch = arch
        self.data = _splits(data)
        self.split = split
        self.recompute_tol = float(recompute_tol)
        self.layout = arch.layout()
        self.dim = self.layout.size
        self.has_grad = split == "train"
        self.recompute_events = 0
        self._ref = None
        self._state = None

    def _xy(self):
        d = self.data
        return (d.X_train, d.y_train) if self.split == "train" else (d.X_test, d.y_test)

    def _stats_for(self, x):
        from .nn import ParamVector, recompute_bn_stats

        if not self.arch.has_bn:
            return None
        if self._ref is not None:
            den = max(np.linalg.norm(self._ref), 1e-12)
            if np.linalg.norm(x - self._ref) / den <= self.recompute_tol:
                return self._state
        self._state = recompute_bn_stats(self.arch, ParamVector(x, self.layout), self.data.X_train)
        self._ref = x.copy()
        self.recompute_events += 1
        return self._state

    def loss(self, x):
        from .nn import ParamVector, forward

        x = _vec(x)
        X, y = self._xy()
        return forward(self.arch, ParamVector(x, self.layout), X, y, False, self._stats_for(x)).loss

    def grad(self, x):
        from .nn import ParamVector, loss_and_grad

        if not self.has_grad:
            raise NotImplementedError("exact gradients only for the training split")
        x = _vec(x)
        d = self.data
        return loss_and_grad(self.arch, ParamVector(x, self.layout), d.X_train, d.y_train,
                             train=self.arch.has_bn, bn_state=None)[1].data

    def group_masks(self, seed=0):
        from .nn import bn_mask, matched_non_bn_mask

        return bn_mask(self.layout), matched_non_bn_mask(self.layout, seed)
