"""Small input-validation helpers shared by the modules."""
import math

import numpy as np


def check_finite_scalar(x, name="value"):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x!r}")
    return x


def check_positive(x, name="value", strict=True):
    x = check_finite_scalar(x, name)
    if (strict and x <= 0) or (not strict and x < 0):
        raise ValueError(f"{name} must be {'>' if strict else '>='} 0, got {x!r}")
    return x


def check_vector(w, name="w", dim=None):
    """Return ``w`` as a finite 1-D float64 array."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_unit(u, name="u", atol=1e-12):
    u = check_vector(u, name)
    n = np.linalg.norm(u)
    if abs(n - 1.0) > atol:
        raise ValueError(f"{name} must have unit norm, got {n!r}")
    return u


def make_rng(seed, *stream):
    """Generator for ``seed`` mixed with optional substream indices.

    Substreams derived from ``(seed, i)`` are statistically independent, which
    lets parallel trials reproduce serial results exactly.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def seed_to_int32(seed, *stream):
    """Derive a 32-bit seed for APIs (e.g. scikit-learn) that need one."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
