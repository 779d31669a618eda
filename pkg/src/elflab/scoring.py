"""Strictly proper losses and the lottery probability formulas of the ELF family.

All losses map (report, outcome) -> [0, 1]. Reports are probabilities in
[0, 1], outcomes are binary. Everything here is a pure function; the lottery
formulas give the per-round win probabilities that the mechanisms in
:mod:`elflab.mechanisms` draw from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Cap for the rescaled log loss: -log(p) clamped at log(100), then divided
# by log(100) so the range stays inside [0, 1].
LOG_LOSS_CAP = math.log(100.0)

PROB_ATOL = 1e-12


def _check_prob(x: float, name: str) -> float:
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return float(x)


def _check_outcome(o: int) -> int:
    if o not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {o}")
    return int(o)


def brier_loss(report: float, outcome: int) -> float:
    """Squared error (r - o)^2; the canonical strictly proper loss."""
    r = _check_prob(report, "report")
    o = _check_outcome(outcome)
    return (r - o) ** 2


def spherical_loss(report: float, outcome: int) -> float:
    """1 - p_o / ||(r, 1-r)||_2, the spherical score turned into a [0,1] loss."""
    r = _check_prob(report, "report")
    o = _check_outcome(outcome)
    p_o = r if o == 1 else 1.0 - r
    norm = math.hypot(r, 1.0 - r)
    return 1.0 - p_o / norm


def scaled_log_loss(report: float, outcome: int) -> float:
    """Log loss clamped at log(100) and rescaled to [0, 1].

    The clamp keeps the range bounded (plain log loss is unbounded at the
    endpoints); rescaling by the cap puts the range exactly in [0, 1].
    """
    r = _check_prob(report, "report")
    o = _check_outcome(outcome)
    p_o = r if o == 1 else 1.0 - r
    if p_o <= 0.0:
        return 1.0
    return min(-math.log(p_o), LOG_LOSS_CAP) / LOG_LOSS_CAP


def absolute_loss(report: float, outcome: int) -> float:
    """|r - o|. Not strictly proper; kept as a negative control."""
    return abs(_check_prob(report, "report") - _check_outcome(outcome))


@dataclass(frozen=True)
class LossFn:
    """A named loss function with range [0, 1]."""

    name: str
    evaluate: Callable[[float, int], float] = field(repr=False)

    def __call__(self, report: float, outcome: int) -> float:
        return self.evaluate(report, outcome)


BRIER = LossFn("brier", brier_loss)
SPHERICAL = LossFn("spherical", spherical_loss)
SCALED_LOG = LossFn("scaled-log", scaled_log_loss)
ABSOLUTE = LossFn("absolute", absolute_loss)

LOSS_FUNCTIONS = {f.name: f for f in (BRIER, SPHERICAL, SCALED_LOG, ABSOLUTE)}


def expected_loss(report: float, belief: float, loss: LossFn = BRIER) -> float:
    """Expected loss of `report` when the outcome is Bernoulli(`belief`)."""
    b = _check_prob(belief, "belief")
    return b * loss(report, 1) + (1.0 - b) * loss(report, 0)


def verify_strict_properness(loss: LossFn, grid_size: int) -> tuple[bool, float]:
    """Check strict properness on a uniform grid of beliefs and reports.

    For every grid belief b, the truthful report must strictly minimize the
    expected loss among all grid reports. Returns (ok, min_gap) where
    min_gap = min over (b, r != b) of E[loss(r)] - E[loss(b)]; ok iff the
    gap is strictly positive everywhere.
    """
    if grid_size < 3:
        raise ValueError("grid_size must be >= 3")
    grid = np.linspace(0.0, 1.0, grid_size)
    min_gap = math.inf
    for b in grid:
        truthful = expected_loss(b, b, loss)
        for r in grid:
            if r == b:
                continue
            gap = expected_loss(r, b, loss) - truthful
            min_gap = min(min_gap, gap)
    return min_gap > 0.0, min_gap


def woe_probability(loss: float, n_experts: int, epsilon: float = 1.0) -> float:
    """Marginal probability that an expert with this loss wins the sad point.

    The per-round sad lottery draws a uniform candidate (at rate epsilon
    under exploration separation) and the candidate wins the point with
    probability 1/2 + loss/4, for a marginal of (epsilon/N)(1/2 + loss/4).
    Always inside [epsilon/(2N), 3 epsilon/(4N)].
    """
    if n_experts < 2:
        raise ValueError("need at least two experts")
    _check_prob(epsilon, "epsilon")
    if not (0.0 <= loss <= 1.0):
        raise ValueError(f"loss must lie in [0, 1], got {loss}")
    return (epsilon / n_experts) * (0.5 + loss / 4.0)


@dataclass(frozen=True)
class ElfParams:
    """Parameters of the generalized sad-lottery family.

    The per-round lottery awards at most one sad point. Expert i wins with
    probability (1/N)(a1 + a2 l_i - (a2 rho/(N-1)) sum_{j != i} l_j) and a
    dummy absorbs the rest. The joint range below is exactly what keeps all
    of those numbers in [0, 1]:

        0 <= a1 <= 1,  0 < a2 <= 1,  1 - (1 - a1)/a2 <= rho <= a1/a2.

    `epsilon` is the exploration rate (1 means full information). `beta`
    optionally rescales losses; needed only on the a1 == a2*rho boundary
    where a loss of exactly 1 would zero out a win probability.
    """

    a1: float = 0.5
    a2: float = 0.25
    rho: float = 0.0
    epsilon: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.a1 <= 1.0):
            raise ValueError(f"a1 must lie in [0, 1], got {self.a1}")
        if not (0.0 < self.a2 <= 1.0):
            raise ValueError(f"a2 must lie in (0, 1], got {self.a2}")
        lo = 1.0 - (1.0 - self.a1) / self.a2
        hi = self.a1 / self.a2
        if not (lo - PROB_ATOL <= self.rho <= hi + PROB_ATOL):
            raise ValueError(
                f"rho must lie in [{lo}, {hi}] for a1={self.a1}, a2={self.a2}; got {self.rho}"
            )
        _check_prob(self.epsilon, "epsilon")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")


# The plain sad lottery is the a1=1/2, a2=1/4, rho=0 member of the family.
DEFAULT_ELF_PARAMS = ElfParams(a1=0.5, a2=0.25, rho=0.0)


def general_elf_winner_distribution(
    losses: Sequence[float], params: ElfParams
) -> np.ndarray:
    """Winner distribution of the generalized sad lottery, dummy first.

    Returns an array of length N+1: index 0 is the dummy (nobody gets the
    point), index i is expert i. Entries are nonnegative and sum to one for
    every loss vector once the params satisfy their joint range.
    """
    l = np.asarray(losses, dtype=float) * params.beta
    n = l.size
    if n < 2:
        raise ValueError("need at least two experts")
    if np.any(l < 0.0) or np.any(l > 1.0):
        raise ValueError("losses must lie in [0, 1]")
    total = l.sum()
    out = np.empty(n + 1)
    out[0] = 1.0 - params.a1 - (params.a2 * (1.0 - params.rho) / n) * total
    rival_sums = total - l
    out[1:] = (params.a1 + params.a2 * l - (params.a2 * params.rho / (n - 1)) * rival_sums) / n
    if np.any(out < -PROB_ATOL):
        raise ValueError(f"negative winner probability from params {params}")
    s = out.sum()
    if abs(s - 1.0) > 1e-12:
        raise AssertionError(f"winner distribution sums to {s}, not 1")
    return np.clip(out, 0.0, 1.0)


def ielf_point_probability(losses: Sequence[float], index: int) -> float:
    """Happy-lottery point probability with the rival sum over the N-1 others."""
    l = np.asarray(losses, dtype=float)
    n = l.size
    if n < 2:
        raise ValueError("need at least two experts")
    rivals = l.sum() - l[index]
    return (1.0 - l[index] + rivals / (n - 1)) / n


def elfx_point_probability(losses: Sequence[float], index: int) -> float:
    """Happy-lottery point probability with the rival sum over all N experts.

    Summing over everyone (including the expert itself) keeps the value
    strictly inside (0, 1), which is what rescues no-regret learning.
    """
    l = np.asarray(losses, dtype=float)
    n = l.size
    if n < 2:
        raise ValueError("need at least two experts")
    return (1.0 - l[index] + l.sum() / n) / n
