"""Asymmetric loss valleys: synthetic valleys, SGD averaging bias, shift models,
a small BN network and landscape probes."""
try:
    from importlib.metadata import PackageNotFoundError, version

    __version__ = version("artifact")
except Exception:  # pragma: no cover - not installed
    __version__ = "0.1.0"

from .valley_models import (AsymmetrySpec, GradientBounds, IsotropicQuadratic, PiecewiseValley1D,
                            SeparableValleyND, SymmetricFunction1D, build_valley_from_spec)
from .theory import theorem_one_lower_bound, theorem_two_constants
from .sgd_sim import SGDConfig, run_sgd, segment_rounds, verify_theorem_two
from .shiftgen import build_shift_pair, enumerate_expected_losses, monte_carlo_expected_losses

__all__ = [
    "AsymmetrySpec", "GradientBounds", "IsotropicQuadratic", "PiecewiseValley1D", "SeparableValleyND",
    "SymmetricFunction1D", "build_valley_from_spec", "theorem_one_lower_bound", "theorem_two_constants",
    "SGDConfig", "run_sgd", "segment_rounds", "verify_theorem_two", "build_shift_pair",
    "enumerate_expected_losses", "monte_carlo_expected_losses", "__version__",
]
