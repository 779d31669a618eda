"""Exact Poisson binomial machinery plus executable tail/mode/ratio bounds.

The pmf is computed by exact O(t^2) Bernoulli convolution; every bound in
this module is checked in the test suite against that exact reference. We
deliberately avoid FFT methods: the bound checks compare nearly-equal
numbers and need convolution-level accuracy, not speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Absolute slack used when comparing bound expressions against the exact DP;
# the DP error is O(t * machine epsilon).
INEQ_SLACK = 1e-13


def pbin_pmf(theta: Sequence[float]) -> np.ndarray:
    """Exact pmf of a sum of independent Bernoulli(theta_s) variables."""
    th = np.asarray(theta, dtype=float)
    if th.size == 0:
        raise ValueError("theta must be nonempty")
    if np.any(th < 0.0) or np.any(th > 1.0):
        raise ValueError("theta entries must lie in [0, 1]")
    pmf = np.array([1.0])
    for p in th:
        nxt = np.zeros(pmf.size + 1)
        nxt[:-1] = pmf * (1.0 - p)
        nxt[1:] += pmf * p
        pmf = nxt
    return pmf


@dataclass(frozen=True)
class PBin:
    """A Poisson binomial distribution with its exact pmf cached."""

    theta: np.ndarray
    pmf: np.ndarray = field(repr=False)

    @classmethod
    def from_params(cls, theta: Sequence[float]) -> "PBin":
        th = np.asarray(theta, dtype=float)
        return cls(theta=th, pmf=pbin_pmf(th))

    @property
    def t(self) -> int:
        return self.theta.size

    @property
    def mean(self) -> float:
        """Parameter mean theta_bar = (1/t) sum theta_s."""
        return float(self.theta.mean())


def pbin_cdf(dist: PBin, k: int) -> float:
    """P[Y <= k]; k = -1 returns 0."""
    if k < -1 or k > dist.t:
        raise ValueError(f"k must lie in [-1, {dist.t}], got {k}")
    if k == -1:
        return 0.0
    return float(dist.pmf[: k + 1].sum())


def pbin_tail(dist: PBin, k: int) -> float:
    """P[Y > k], computed as a suffix sum so cdf + tail matches the pmf mass."""
    if k < -1 or k > dist.t:
        raise ValueError(f"k must lie in [-1, {dist.t}], got {k}")
    return float(dist.pmf[k + 1 :].sum())


def modes(dist: PBin) -> tuple[int, int]:
    """The one or two consecutive modes (m_L, m_R) of the pmf.

    Two modes only ever occur with exactly equal pmf values; a relative
    1e-12 tolerance absorbs convolution round-off.
    """
    p = dist.pmf
    top = p.max()
    near = np.flatnonzero(p >= top * (1.0 - 1e-12))
    m_l, m_r = int(near[0]), int(near[-1])
    if m_r - m_l > 1:
        raise AssertionError(f"more than two modes: {near}")
    return m_l, m_r


def ratio(dist: PBin, k: int) -> float:
    """b_t(k) = p(k-1)/p(k), with p(-1) = 0."""
    if k < 0 or k > dist.t:
        raise ValueError(f"k must lie in [0, {dist.t}], got {k}")
    denom = dist.pmf[k]
    if denom <= 0.0:
        raise ZeroDivisionError(f"pmf[{k}] is zero")
    num = 0.0 if k == 0 else dist.pmf[k - 1]
    return float(num / denom)


def kl_bernoulli(p: float, q: float) -> float:
    """Bernoulli KL divergence d(p || q) with the 0 log 0 = 0 convention."""
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must lie in [0, 1], got {p}")
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def binomial_tail_lower(t: int, theta: float, k: int) -> float:
    """Lower bound (1/sqrt(2t)) exp(-t d(k/t || theta)) on P[BIN(t, theta) <= k]."""
    if k < 0 or k > t:
        raise ValueError(f"k must lie in [0, {t}], got {k}")
    return math.exp(-t * kl_bernoulli(k / t, theta)) / math.sqrt(2.0 * t)


def hoeffding_tail(t: int, theta_bar: float, k: float) -> float:
    """Hoeffding bound exp(-2k^2/t) on both tails P[|Y - theta_bar t| >= k]."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    return math.exp(-2.0 * k * k / t)


def _separate_once(theta: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """One separation move on a sorted vector: push the lowest movable entry
    down and the highest movable entry up by the same amount until one of
    them hits `lo` or `hi`. Preserves the sum and the sort order."""
    down_idx = None
    for i, v in enumerate(theta):
        if v > lo:
            down_idx = i
            break
    up_idx = None
    for i in range(theta.size - 1, -1, -1):
        if theta[i] < hi:
            up_idx = i
            break
    if down_idx is None or up_idx is None or down_idx >= up_idx:
        raise ValueError("no valid pair of entries to separate")
    v_down, v_up = theta[down_idx], theta[up_idx]
    if v_down > v_up:
        raise ValueError("entries to separate are out of order")
    out = theta.copy()
    if v_down - lo >= hi - v_up:
        out[down_idx] = v_down + v_up - hi
        out[up_idx] = hi
    else:
        out[down_idx] = lo
        out[up_idx] = v_down + v_up - lo
    return out


def separation_step(theta: Sequence[float], l_prime: float, u_prime: float) -> np.ndarray:
    """Move two parameters apart by equal amounts until one hits a bound.

    Preconditions: theta sorted nondecreasing, every entry in
    [l_prime, u_prime], and at least two entries strictly inside. The sum
    is preserved exactly; for k <= t*theta_bar - 1 the lower-tail cdf can
    only shrink, for k >= t*theta_bar + 1 it can only grow.
    """
    th = np.asarray(theta, dtype=float)
    if np.any(np.diff(th) < 0):
        raise ValueError("theta must be sorted nondecreasing")
    if np.any(th < l_prime) or np.any(th > u_prime):
        raise ValueError("theta entries must lie in [l_prime, u_prime]")
    interior = int(np.sum((th > l_prime) & (th < u_prime)))
    if interior < 2:
        raise ValueError("need at least two entries strictly inside (l_prime, u_prime)")
    return _separate_once(th, l_prime, u_prime)


def _multiset_difference(target: np.ndarray, current: np.ndarray, tol: float) -> np.ndarray:
    """Values of sorted `target` not matched (within tol) by sorted `current`."""
    out = []
    i = j = 0
    while i < target.size and j < current.size:
        if abs(target[i] - current[j]) <= tol:
            i += 1
            j += 1
        elif target[i] < current[j]:
            out.append(target[i])
            i += 1
        else:
            j += 1
    out.extend(target[i:])
    return np.asarray(out)


def homogenize_to_uniform_chain(
    theta: Sequence[float], tol: float = 1e-9
) -> list[np.ndarray]:
    """Chain of separation moves from the uniform vector (theta_bar, ...) to theta.

    Each step picks the extreme values of theta still missing from the
    current vector as the (floor, ceiling) pair; every link is a valid
    separation move, so the tail inequalities hold link by link. The chain
    has at most t-1 links and its last vector equals sorted(theta).
    """
    target = np.sort(np.asarray(theta, dtype=float))
    t = target.size
    if t == 0:
        raise ValueError("theta must be nonempty")
    cur = np.full(t, target.mean())
    chain = [cur.copy()]
    for _ in range(t):
        missing = _multiset_difference(target, cur, tol)
        if missing.size == 0:
            break
        cur = _separate_once(cur, float(missing.min()), float(missing.max()))
        cur.sort()
        chain.append(cur.copy())
    else:
        raise AssertionError("homogenization did not converge in t steps")
    if not np.allclose(chain[-1], target, atol=1e-12, rtol=0.0):
        raise AssertionError("chain did not reach the target parameters")
    return chain


def homogenize_to_extremes(
    theta: Sequence[float], l_prime: float, u_prime: float
) -> np.ndarray:
    """Separate repeatedly with fixed bounds until at most one interior entry is left.

    Result has the shape (l', ..., l', v, u', ..., u') with the same sum as
    theta; each applied move thins both tails.
    """
    th = np.sort(np.asarray(theta, dtype=float))
    if np.any(th < l_prime) or np.any(th > u_prime):
        raise ValueError("theta entries must lie in [l_prime, u_prime]")
    cur = th.copy()
    for _ in range(th.size):
        interior = int(np.sum((cur > l_prime) & (cur < u_prime)))
        if interior < 2:
            break
        cur = _separate_once(cur, l_prime, u_prime)
        cur.sort()
    return cur


def pbin_tail_upper(t: int, theta_bar: float, k: int) -> tuple[float, float]:
    """Chernoff-style upper bounds on the Poisson binomial tail at mean theta_bar.

    Returns (kl_form, quadratic_form):

        kl_form  = exp(-t d(k/t || theta_bar))
        quad_form = exp(-(t / (2 theta_bar)) (k/t - theta_bar)^2)

    Requires theta_bar <= 1/2 and integer k with k <= t*theta_bar - 1 (the
    lower tail P[Y <= k]) or k >= t*theta_bar + 1 (the upper tail
    P[Y >= k]). The KL form bounds the exact tail on both sides and, on
    the lower tail, sits below the quadratic form. On the upper tail the
    quadratic sharpening is NOT sound: for k/t moderately above theta_bar
    the integrand denominator x(1-x) exceeds theta_bar(1-theta_bar), the
    ordering flips, and the quadratic form can dip below the exact tail
    (e.g. t=7, theta_bar~0.102, k=4). Use only the KL form on that side.
    """
    if not (0.0 < theta_bar <= 0.5):
        raise ValueError(f"theta_bar must lie in (0, 1/2], got {theta_bar}")
    if not (k <= t * theta_bar - 1.0 or k >= t * theta_bar + 1.0):
        raise ValueError(f"k={k} is not at least one away from the mean {t * theta_bar}")
    if k < 0 or k > t:
        raise ValueError(f"k must lie in [0, {t}], got {k}")
    kl_form = math.exp(-t * kl_bernoulli(k / t, theta_bar))
    quad_form = math.exp(-(t / (2.0 * theta_bar)) * (k / t - theta_bar) ** 2)
    return kl_form, quad_form


def pbin_tail_lower(t: int, l_prime: float, theta_bar: float, k: int) -> float:
    """Lower bound on P[Y <= k] for parameters inside [l_prime, 1/2].

    Valid for t >= 6 and integer k in [t*theta_bar + 1 - l_prime*t/8,
    t*theta_bar - 1]; the constant 36 comes from the homogenize-to-extremes
    reduction to a binomial tail.
    """
    if t < 6:
        raise ValueError(f"t must be at least 6, got {t}")
    if not (0.0 < l_prime <= theta_bar <= 0.5):
        raise ValueError("need 0 < l_prime <= theta_bar <= 1/2")
    k_lo = t * theta_bar + 1.0 - l_prime * t / 8.0
    k_hi = t * theta_bar - 1.0
    if k_lo > k_hi:
        raise ValueError(f"empty validity window [{k_lo}, {k_hi}] at t={t}")
    if not (k_lo <= k <= k_hi):
        raise ValueError(f"k={k} outside validity window [{k_lo}, {k_hi}]")
    exponent = -(36.0 * t / l_prime) * (theta_bar - (k - 1) / t) ** 2
    return math.exp(exponent) / math.sqrt(2.0 * t)


DEFAULT_C1 = 362.0
DEFAULT_C2 = 864.0


def pbin_ratio_lower(
    t: int,
    l_prime: float,
    theta_bar: float,
    k: int,
    c1: float = DEFAULT_C1,
    c2: float = DEFAULT_C2,
) -> float:
    """Lower bound 1 - c1 log(t)/sqrt(l' t) - c2 |k - t theta_bar|/(l' t) on b_t(k).

    Valid for t >= 24^2 / l_prime and integer k within l_prime*t/24 - 2 of
    the mean. The bound may be negative (vacuous) near the edge of its
    window; it still sits below the true ratio, which is nonnegative.
    """
    if t < 24.0**2 / l_prime:
        raise ValueError(f"need t >= 24^2/l_prime = {24.0 ** 2 / l_prime}, got {t}")
    if not (0.0 < l_prime <= theta_bar <= 0.5):
        raise ValueError("need 0 < l_prime <= theta_bar <= 1/2")
    half_width = l_prime * t / 24.0
    k_lo = t * theta_bar + 2.0 - half_width
    k_hi = t * theta_bar - 2.0 + half_width
    if not (k_lo <= k <= k_hi):
        raise ValueError(f"k={k} outside validity window [{k_lo}, {k_hi}]")
    return (
        1.0
        - c1 * math.log(t) / math.sqrt(l_prime * t)
        - c2 * abs(k - t * theta_bar) / (l_prime * t)
    )


def lead_pack_t_min_holds(t: int, l_poi: float, n_experts: int) -> bool:
    """Whether t is past the threshold where the lead-pack bound is non-vacuous."""
    lhs = 24.0 + math.sqrt(8.0 * l_poi * t * math.log(n_experts * t / l_poi))
    return lhs < l_poi * t / 24.0


def lead_pack_bound(
    t: int,
    l_poi: float,
    n_experts: int,
    c1: float = DEFAULT_C1,
    c2: float = DEFAULT_C2,
) -> float:
    """Bound c1 log(t)/sqrt(l_poi t) + c2 sqrt(t log N)/(l_poi t) on Pr(|A_t| > 1).

    l_poi is the minimum per-round sad-point probability (1/(2N) at full
    information, epsilon/(2N) under bandit feedback). Below the threshold
    round the trivial bound 1 is returned. The default constants mirror the
    ratio bound's and are placeholders, not sharp values.
    """
    if not (0.0 < l_poi <= 0.25):
        raise ValueError(f"l_poi must lie in (0, 1/4], got {l_poi}")
    if not lead_pack_t_min_holds(t, l_poi, n_experts):
        return 1.0
    value = c1 * math.log(t) / math.sqrt(l_poi * t) + c2 * math.sqrt(
        t * math.log(n_experts)
    ) / (l_poi * t)
    return min(value, 1.0)
