"""elflab: a simulation and verification lab for incentive-compatible
online forecasting mechanisms built on sad-lottery perturbed-leader
selection, with exact small-instance truthfulness audits, a Poisson
binomial bound checker, and reproducible regret-scaling experiments."""

from .mechanisms import MechanismKind
from .scoring import BRIER, SCALED_LOG, SPHERICAL, ElfParams, LossFn

__all__ = [
    "BRIER",
    "SPHERICAL",
    "SCALED_LOG",
    "ElfParams",
    "LossFn",
    "MechanismKind",
]

__version__ = "0.1.0"
