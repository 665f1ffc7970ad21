"""Synthetic valleys with closed-form losses and gradients.

Every function here has its theorem-relevant constants (one-sided gradient
bounds, asymmetry ratio, dead zone) exact by construction, so they serve as
ground truth for the simulators and probes.

Conventions: the flat side is ``w >= 0`` and the sharp side ``w < 0``; at
exactly ``w = 0`` the flat-side rule applies.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._validation import check_finite_scalar, check_vector, make_rng

WOBBLE_PERIOD = 0.1


@dataclass(frozen=True)
class AsymmetrySpec:
    """The ``(r, p, c, zeta)`` tuple of an asymmetric direction.

    Along the direction, the slope stays below ``p`` on the flat side and
    below ``-c * p`` on the sharp side for offsets in ``(zeta, r)``.
    """

    r: float
    p: float
    c: float
    zeta: float = 0.0

    def __post_init__(self):
        for name in ("r", "p", "c", "zeta"):
            check_finite_scalar(getattr(self, name), name)
        if not self.r > self.zeta >= 0:
            raise ValueError(f"need r > zeta >= 0, got r={self.r}, zeta={self.zeta}")
        if self.p <= 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.c <= 1:
            raise ValueError(f"c must exceed 1, got {self.c}")

    def as_tuple(self):
        return (self.r, self.p, self.c, self.zeta)


@dataclass(frozen=True)
class GradientBounds:
    """One-sided gradient bounds of a 1D valley plus the SGD noise bound.

    ``nu <= a_plus`` is a hypothesis of the averaging theorem rather than a
    structural requirement, so it is checked by
    :func:`asymvalley.theory.theorem_two_hypothesis_check`, not here.
    """

    a_plus: float
    b_plus: float
    a_minus: float
    b_minus: float
    nu: float = 0.0

    def __post_init__(self):
        for name in ("a_plus", "b_plus", "a_minus", "b_minus", "nu"):
            check_finite_scalar(getattr(self, name), name)
        if not 0 < self.b_plus <= self.a_plus:
            raise ValueError(f"need 0 < b_plus <= a_plus, got {self.b_plus}, {self.a_plus}")
        if not self.b_minus <= self.a_minus < 0:
            raise ValueError(f"need b_minus <= a_minus < 0, got {self.b_minus}, {self.a_minus}")
        if self.nu < 0:
            raise ValueError(f"nu must be >= 0, got {self.nu}")

    @classmethod
    def tight(cls, a_plus, a_minus, nu=0.0):
        """Bounds whose lower and upper values coincide on each side."""
        return cls(a_plus=a_plus, b_plus=a_plus, a_minus=a_minus, b_minus=a_minus, nu=nu)

    @property
    def c(self):
        """Asymmetry ratio ``-a_minus / a_plus``."""
        return -self.a_minus / self.a_plus

    def with_nu(self, nu):
        return GradientBounds(self.a_plus, self.b_plus, self.a_minus, self.b_minus, nu)

    def to_dict(self):
        return {"a_plus": self.a_plus, "b_plus": self.b_plus, "a_minus": self.a_minus,
                "b_minus": self.b_minus, "nu": self.nu}


def _as_scalar_or_array(w):
    if np.ndim(w) == 0:
        x = float(w)
        if not math.isfinite(x):
            raise ValueError(f"position must be finite, got {w!r}")
        return x, True
    arr = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("positions must be finite")
    return arr, False


@dataclass(frozen=True)
class PiecewiseValley1D:
    """A 1D valley minimized at 0 with bounded one-sided gradients.

    Profiles:

    ``"tight"``
        slope exactly ``a_plus`` for ``w >= 0`` and ``a_minus`` for ``w < 0``.
    ``"wobble"``
        slope oscillates sinusoidally inside ``[b_plus, a_plus]`` and
        ``[b_minus, a_minus]``; the loss stays in closed form.

    A positive ``dead_zone`` (tight profile only) replaces the kink by a
    quadratic cap on ``(-dead_zone, dead_zone)`` whose slope ramps linearly
    from 0 to the side slope, keeping the loss continuously differentiable.
    """

    bounds: GradientBounds
    profile: str = "tight"
    dead_zone: float = 0.0
    period: float = WOBBLE_PERIOD
    spec: AsymmetrySpec | None = None

    def __post_init__(self):
        if self.profile not in ("tight", "wobble"):
            raise ValueError(f"unknown profile {self.profile!r}")
        check_finite_scalar(self.dead_zone, "dead_zone")
        if self.dead_zone < 0:
            raise ValueError("dead_zone must be >= 0")
        if self.dead_zone > 0 and self.profile != "tight":
            raise ValueError("dead_zone is only supported with the tight profile")
        if not self.period > 0:
            raise ValueError("period must be positive")

    # side coefficients: grad = m + h * sin(k w), loss = m w + h (1 - cos(k w)) / k
    def _coeffs(self, flat):
        b = self.bounds
        if self.profile == "tight":
            return (b.a_plus, 0.0) if flat else (b.a_minus, 0.0)
        if flat:
            return 0.5 * (b.a_plus + b.b_plus), 0.5 * (b.a_plus - b.b_plus)
        return 0.5 * (b.a_minus + b.b_minus), 0.5 * (b.a_minus - b.b_minus)

    def loss(self, w):
        x, scalar = _as_scalar_or_array(w)
        if scalar:
            return self._loss_scalar(x)
        return np.vectorize(self._loss_scalar, otypes=[np.float64])(x)

    def grad(self, w):
        x, scalar = _as_scalar_or_array(w)
        if scalar:
            return self._grad_scalar(x)
        return np.vectorize(self._grad_scalar, otypes=[np.float64])(x)

    def _loss_scalar(self, w):
        flat = w >= 0
        m, h = self._coeffs(flat)
        z = self.dead_zone
        if z > 0:
            if abs(w) < z:
                return abs(m) * w * w / (2 * z)
            sign = 1.0 if flat else -1.0
            return abs(m) * z / 2 + m * (w - sign * z)
        k = 2 * math.pi / self.period
        return m * w + h * (1.0 - math.cos(k * w)) / k

    def _grad_scalar(self, w):
        flat = w >= 0
        m, h = self._coeffs(flat)
        z = self.dead_zone
        if z > 0:
            if abs(w) < z:
                return abs(m) * w / z
            return m
        if h == 0.0:
            return m
        return m + h * math.sin(2 * math.pi * w / self.period)


@dataclass(frozen=True)
class SymmetricFunction1D:
    """``slope * |w|``; the flat kind has a small slope, the sharp kind a large one."""

    kind: str = "sharp"
    slope: float | None = None

    def __post_init__(self):
        if self.kind not in ("flat", "sharp"):
            raise ValueError(f"kind must be 'flat' or 'sharp', got {self.kind!r}")
        if self.slope is None:
            object.__setattr__(self, "slope", 0.01 if self.kind == "flat" else 1.0)
        if not self.slope > 0:
            raise ValueError("slope must be positive")

    @property
    def bounds(self):
        return GradientBounds.tight(self.slope, -self.slope)

    def loss(self, w):
        x, scalar = _as_scalar_or_array(w)
        out = self.slope * np.abs(x)
        return float(out) if scalar else out

    def grad(self, w):
        x, scalar = _as_scalar_or_array(w)
        if scalar:
            return self.slope if x >= 0 else -self.slope
        return np.where(x >= 0, self.slope, -self.slope)


@dataclass(frozen=True)
class IsotropicQuadratic:
    """``0.5 * scale * ||w - center||^2``; the symmetric reference for probes."""

    dim: int
    center: np.ndarray | None = None
    scale: float = 1.0

    def __post_init__(self):
        c = np.zeros(self.dim) if self.center is None else check_vector(self.center, "center", self.dim)
        object.__setattr__(self, "center", c)

    def loss(self, w):
        d = check_vector(w, "w", self.dim) - self.center
        return 0.5 * self.scale * float(d @ d)

    def grad(self, w):
        return self.scale * (check_vector(w, "w", self.dim) - self.center)


def orthonormal_directions(k, dim, seed):
    """``k`` orthonormal rows in ``R^dim`` from seeded Gaussian vectors.

    Gram-Schmidt is done through a QR factorization; signs are fixed so the
    result is a deterministic function of the seed.
    """
    if not 1 <= k <= dim:
        raise ValueError(f"need 1 <= k <= dim, got k={k}, dim={dim}")
    g = make_rng(seed).standard_normal((dim, k))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q.T)


@dataclass(frozen=True)
class SeparableValleyND:
    """Sum of 1D losses of the projections onto orthonormal directions.

    ``loss(base + sum_i t_i u_i + v) = sum_i axis_losses[i](t_i)`` for any
    ``v`` orthogonal to every ``u_i``, so neighbourhood asymmetry holds at
    every radius.
    """

    axis_losses: tuple
    directions: np.ndarray
    base: np.ndarray = field(default=None)

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        if U.shape[0] != len(self.axis_losses):
            raise ValueError("need one direction per axis loss")
        gram = U @ U.T
        if not np.allclose(gram, np.eye(U.shape[0]), atol=1e-12, rtol=0):
            raise ValueError("directions must be orthonormal")
        object.__setattr__(self, "directions", U)
        object.__setattr__(self, "axis_losses", tuple(self.axis_losses))
        base = np.zeros(U.shape[1]) if self.base is None else check_vector(self.base, "base", U.shape[1])
        object.__setattr__(self, "base", base)

    @classmethod
    def embed(cls, axis_losses: Sequence, dim, seed=0, base=None):
        U = orthonormal_directions(len(axis_losses), dim, seed)
        return cls(tuple(axis_losses), U, base)

    @property
    def dim(self):
        return self.directions.shape[1]

    @property
    def k(self):
        return self.directions.shape[0]

    def project(self, x):
        return self.directions @ (check_vector(x, "x", self.dim) - self.base)

    def point(self, t):
        return self.base + check_vector(t, "t", self.k) @ self.directions

    def axis_values(self, t):
        return np.array([f.loss(float(ti)) for f, ti in zip(self.axis_losses, t)])

    def loss(self, x):
        return float(sum(f.loss(float(ti)) for f, ti in zip(self.axis_losses, self.project(x))))

    def grad(self, x):
        t = self.project(x)
        g = np.array([f.grad(float(ti)) for f, ti in zip(self.axis_losses, t)])
        return g @ self.directions


def build_valley_from_spec(spec: AsymmetrySpec) -> PiecewiseValley1D:
    """A valley whose positive axis is ``spec``-asymmetric with margin.

    Outside the dead zone the flat slope is ``0.6 p`` and the sharp slope
    ``-1.5 c p``, so the spec holds strictly while halving ``p`` or doubling
    ``c`` breaks it.
    """
    if not isinstance(spec, AsymmetrySpec):
        spec = AsymmetrySpec(*spec)
    bounds = GradientBounds.tight(0.6 * spec.p, -1.5 * spec.c * spec.p)
    return PiecewiseValley1D(bounds, profile="tight", dead_zone=spec.zeta, spec=spec)


# --- JSON documents -------------------------------------------------------

VALLEY_KINDS = ("piecewise", "wobble", "from-spec", "symmetric-flat", "symmetric-sharp", "separable")


def valley_to_dict(model, seed=0):
    """Serialize a valley as ``{"kind", "bounds", "spec", "seed"}``.

    Separable valleys built from specs additionally carry ``"dim"``.
    """
    doc = {"kind": None, "bounds": None, "spec": None, "seed": int(seed)}
    if isinstance(model, SymmetricFunction1D):
        doc["kind"] = f"symmetric-{model.kind}"
        doc["bounds"] = model.bounds.to_dict()
    elif isinstance(model, SeparableValleyND):
        specs = [getattr(f, "spec", None) for f in model.axis_losses]
        if any(s is None for s in specs):
            raise TypeError("only separable valleys built from specs are serializable")
        doc["kind"] = "separable"
        doc["spec"] = [list(s.as_tuple()) for s in specs]
        doc["dim"] = model.dim
    elif isinstance(model, PiecewiseValley1D):
        if model.spec is not None:
            doc["kind"] = "from-spec"
            doc["spec"] = list(model.spec.as_tuple())
            doc["bounds"] = model.bounds.to_dict()
        elif model.dead_zone > 0:
            raise TypeError("dead-zone valleys are serialized through their spec")
        else:
            doc["kind"] = "wobble" if model.profile == "wobble" else "piecewise"
            doc["bounds"] = model.bounds.to_dict()
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return doc


def valley_from_dict(doc):
    kind = doc.get("kind")
    if kind not in VALLEY_KINDS:
        raise ValueError(f"unknown valley kind {kind!r}")
    seed = int(doc.get("seed", 0))
    if kind in ("piecewise", "wobble"):
        bounds = GradientBounds(**doc["bounds"])
        return PiecewiseValley1D(bounds, profile="tight" if kind == "piecewise" else "wobble")
    if kind.startswith("symmetric-"):
        b = doc.get("bounds") or {}
        return SymmetricFunction1D(kind.split("-", 1)[1], b.get("a_plus"))
    if kind == "from-spec":
        return build_valley_from_spec(AsymmetrySpec(*doc["spec"]))
    specs = doc["spec"]
    if specs and not isinstance(specs[0], (list, tuple)):
        specs = [specs]
    axes = [build_valley_from_spec(AsymmetrySpec(*s)) for s in specs]
    return SeparableValleyND.embed(axes, int(doc.get("dim", len(axes))), seed)


def save_valley(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2))


def load_valley(path):
    return valley_from_dict(json.loads(Path(path).read_text()))
