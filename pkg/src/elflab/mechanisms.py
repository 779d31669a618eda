"""Online selection mechanisms as step-driven state machines.

Every mechanism consumes one loss column per round through ``step`` and
returns a :class:`RoundRecord`. Selection always happens before the round's
losses are used, and bandit mechanisms record (and use) only the losses
they are entitled to observe.

RNG contract: each mechanism owns a single ``numpy.random.Generator``. Per
step the draws are consumed in a fixed order (exploration flag, then
candidate, then woe draws in ascending round order, then a tie-break draw
only when an exact tie occurs), so trajectories are reproducible bit for
bit from the seed.

``selection_distribution_exact`` is the exact small-instance oracle: it
enumerates the per-round lottery outcomes by dynamic programming over
sad-point count vectors and resolves integer ties uniformly (the
exchangeable continuous tie noise makes every tied expert equally likely).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .scoring import (
    ElfParams,
    elfx_point_probability,
    general_elf_winner_distribution,
    ielf_point_probability,
)

MAX_EXACT_CELLS = 16  # enforce n_experts * round <= this for the exact oracle


class MechanismKind(str, Enum):
    FPL_ELF = "fpl_elf"
    FPL_SELF = "fpl_self"
    FPL_ELF_EPS = "fpl_elf_eps"
    FPL_SELF_EPS = "fpl_self_eps"
    ONLINE_IELF = "online_ielf"
    ELF_X = "elf_x"
    MULTIPLE_DRAWS = "multiple_draws"
    DECOUPLED = "decoupled"


SAD_LOTTERY_KINDS = {
    MechanismKind.FPL_ELF,
    MechanismKind.FPL_SELF,
    MechanismKind.FPL_ELF_EPS,
    MechanismKind.FPL_SELF_EPS,
    MechanismKind.DECOUPLED,
}


class InstanceTooLarge(ValueError):
    """Raised when an exact enumeration would exceed the size guard."""


@dataclass
class WoeState:
    """Per-expert cumulative sad points plus the continuous tie noise."""

    cumulative_woe: np.ndarray
    tie_noise: np.ndarray

    def integer_part(self) -> np.ndarray:
        return np.rint(self.cumulative_woe - self.tie_noise).astype(int)


@dataclass
class RoundRecord:
    """One round of a trajectory, in stable serialization order."""

    round: int
    candidate: int | None
    selected: int
    observed_losses: list
    exploration_flag: bool
    woe_draws: list
    extra_observed: int | None = None

    _FIELDS = (
        "round",
        "candidate",
        "selected",
        "observed_losses",
        "exploration_flag",
        "woe_draws",
        "extra_observed",
    )

    def to_json_line(self) -> str:
        payload = {name: getattr(self, name) for name in self._FIELDS}
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "RoundRecord":
        payload = json.loads(line)
        return cls(**{name: payload[name] for name in cls._FIELDS})


@dataclass(frozen=True)
class RegretBoundParams:
    """Constants of the generic perturbed-leader regret bound.

    lambda_min/lambda_max bound the perturbed losses, d_tilde is their
    diameter, lambda_0 bounds the round-0 noise, and (lambda, q) feed the
    max-noise deviation bound: q is the per-round probability that an
    expert's perturbed loss leaves the base level.
    """

    lambda_min: float
    lambda_max: float
    lambda_0: float
    q: float
    lam: float

    @property
    def d_tilde(self) -> float:
        return self.lambda_max - self.lambda_min

    @classmethod
    def for_setting(cls, n_experts: int, epsilon: float = 1.0) -> "RegretBoundParams":
        scale = 4.0 * n_experts / epsilon
        return cls(lambda_min=-2.0, lambda_max=scale - 2.0, lambda_0=1.0,
                   q=epsilon / n_experts, lam=4.0)


def _argmin_tiebreak(values: np.ndarray, rng: np.random.Generator) -> int:
    m = values.min()
    idx = np.flatnonzero(values <= m + 1e-15)
    if idx.size == 1:
        return int(idx[0])
    return int(rng.choice(idx))


def _argmax_tiebreak(values: np.ndarray, rng: np.random.Generator) -> int:
    return _argmin_tiebreak(-np.asarray(values, dtype=float), rng)


def _sad_success(loss: float) -> float:
    """Probability the candidate wins the sad point given its loss."""
    return 0.5 + 0.25 * loss


def _observed(losses: np.ndarray, indices: Iterable[int]) -> list:
    out: list = [None] * losses.size
    for i in set(indices):
        out[i] = float(losses[i])
    return out


class Mechanism:
    """Base class: uniform ``step(losses) -> RoundRecord`` driver."""

    kind: MechanismKind

    def __init__(self, n_experts: int, rng: np.random.Generator):
        if n_experts < 2:
            raise ValueError("need at least two experts")
        self.n = n_experts
        self.rng = rng
        self.t = 0

    def step(self, losses: Sequence[float]) -> RoundRecord:
        raise NotImplementedError


class FplElf(Mechanism):
    """Full-information sad lottery that redraws all past randomness each round.

    At each round the expert with the least redrawn woe is selected; then
    the round's losses join the history and the initial noise, candidates,
    and woe draws for every past round are drawn afresh.

    ``freeze_candidates`` keeps each round's candidate fixed after its first
    draw (only the woe Bernoullis are redrawn); the marginal selection law
    is unchanged.
    """

    kind = MechanismKind.FPL_ELF

    def __init__(self, n_experts, rng, freeze_candidates: bool = False):
        super().__init__(n_experts, rng)
        self.freeze_candidates = freeze_candidates
        self.history: list[np.ndarray] = []
        self._frozen: list[int] = []
        self._sums = rng.uniform(-0.25 / self.n, 0.25 / self.n, self.n)

    def _redraw(self) -> tuple[int | None, np.ndarray]:
        noise = self.rng.uniform(-0.25 / self.n, 0.25 / self.n, self.n)
        sums = noise.copy()
        last_cand, last_woe = None, np.zeros(self.n, dtype=int)
        for s, losses in enumerate(self.history):
            if self.freeze_candidates:
                if s == len(self._frozen):
                    self._frozen.append(int(self.rng.integers(self.n)))
                cand = self._frozen[s]
            else:
                cand = int(self.rng.integers(self.n))
            woe = int(self.rng.random() < _sad_success(losses[cand]))
            sums[cand] += woe
            if s == len(self.history) - 1:
                last_cand = cand
                last_woe = np.zeros(self.n, dtype=int)
                last_woe[cand] = woe
        self._sums = sums
        return last_cand, last_woe

    def step(self, losses: Sequence[float]) -> RoundRecord:
        losses = np.asarray(losses, dtype=float)
        self.t += 1
        selected = _argmin_tiebreak(self._sums, self.rng)
        self.history.append(losses)
        cand, woe = self._redraw()
        return RoundRecord(
            round=self.t,
            candidate=cand,
            selected=selected,
            observed_losses=_observed(losses, range(self.n)),
            exploration_flag=False,
            woe_draws=woe.tolist(),
        )


class Decoupled(Mechanism):
    """Bandit variant with one extra observation per round.

    The mechanism selects the least-woe expert and additionally observes a
    uniformly drawn candidate's loss. Candidates are drawn once and never
    revised; the woe Bernoullis for all past candidates are redrawn each
    round. The woe pool uses only candidate losses, so the per-round
    observation set {selected, candidate} respects the protocol.
    """

    kind = MechanismKind.DECOUPLED

    def __init__(self, n_experts, rng):
        super().__init__(n_experts, rng)
        self._cands: list[int] = []
        self._cand_losses: list[float] = []
        self._sums = rng.uniform(-0.25 / self.n, 0.25 / self.n, self.n)

    def step(self, losses: Sequence[float]) -> RoundRecord:
        losses = np.asarray(losses, dtype=float)
        self.t += 1
        selected = _argmin_tiebreak(self._sums, self.rng)
        cand = int(self.rng.integers(self.n))
        self._cands.append(cand)
        self._cand_losses.append(float(losses[cand]))
        noise = self.rng.uniform(-0.25 / self.n, 0.25 / self.n, self.n)
        sums = noise.copy()
        woe = np.zeros(self.n, dtype=int)
        for s, (c, l) in enumerate(zip(self._cands, self._cand_losses)):
            w = int(self.rng.random() < _sad_success(l))
            sums[c] += w
            if s == len(self._cands) - 1:
                woe[c] = w
        self._sums = sums
        return RoundRecord(
            round=self.t,
            candidate=cand,
            selected=selected,
            observed_losses=_observed(losses, (selected, cand)),
            exploration_flag=False,
            woe_draws=woe.tolist(),
            extra_observed=cand,
        )


class FplSelf(Mechanism):
    """Stabilized full-information sad lottery: nothing is ever redrawn."""

    kind = MechanismKind.FPL_SELF

    def __init__(self, n_experts, rng):
        super().__init__(n_experts, rng)
        noise = rng.uniform(-0.25 / self.n, 0.25 / self.n, self.n)
        self.state = WoeState(cumulative_woe=noise.copy(), tie_noise=noise)

    def step(self, losses: Sequence[float]) -> RoundRecord:
        losses = np.asarray(losses, dtype=float)
        self.t += 1
        selected = _argmin_tiebreak(self.state.cumulative_woe, self.rng)
        cand = int(self.rng.integers(self.n))
        w = int(self.rng.random() < _sad_success(losses[cand]))
        self.state.cumulative_woe[cand] += w
        woe = np.zeros(self.n, dtype=int)
        woe[cand] = w
        return RoundRecord(
            round=self.t,
            candidate=cand,
            selected=selected,
            observed_losses=_observed(losses, range(self.n)),
            exploration_flag=False,
            woe_draws=woe.tolist(),
        )


class FplElfEps(Mechanism):
    """Exploration-separated bandit sad lottery.

    With probability epsilon a round is an exploration round: a uniform
    candidate is selected outright and its observed loss joins the pool.
    Otherwise all pool woe draws (and the initial noise) are redrawn and
    the least-woe expert is selected. Only exploration-round candidate
    losses ever enter the pool.
    """

    kind = MechanismKind.FPL_ELF_EPS

    def __init__(self, n_experts, rng, epsilon: float):
        super().__init__(n_experts, rng)
        if not (0.0 <= epsilon <= 1.0):
            raise ValueError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon
        self.pool: list[tuple[int, int, float]] = []  # (round, candidate, loss)

    def step(self, losses: Sequence[float]) -> RoundRecord:
        losses = np.asarray(losses, dtype=float)
        self.t += 1
        explore = self.rng.random() < self.epsilon
        if explore:
            cand = int(self.rng.integers(self.n))
            self.pool.append((self.t, cand, float(losses[cand])))
            return RoundRecord(
                round=self.t,
                candidate=cand,
                selected=cand,
                observed_losses=_observed(losses, (cand,)),
                exploration_flag=True,
                woe_draws=[0] * self.n,
            )
        scale = self.epsilon / (4.0 * self.n)
        sums = self.rng.uniform(-scale, scale, self.n)
        for _, cand, loss in self.pool:
            sums[cand] += self.rng.random() < _sad_success(loss)
        selected = _argmin_tiebreak(sums, self.rng)
        return RoundRecord(
            round=self.t,
            candidate=None,
            selected=selected,
            observed_losses=_observed(losses, (selected,)),
            exploration_flag=False,
            woe_draws=[0] * self.n,
        )


class FplSelfEps(Mechanism):
    """Stabilized exploration-separated sad lottery (analysis device).

    Always selects the least-woe expert; the candidate is a dummy with
    probability 1 - epsilon (no woe draw, the all-zero convention) and
    uniform otherwise. This breaks bandit feedback on purpose: it is the
    stationary twin whose round marginals match the exploration-separated
    mechanism's exploitation rounds.
    """

    kind = MechanismKind.FPL_SELF_EPS

    def __init__(self, n_experts, rng, epsilon: float):
        super().__init__(n_experts, rng)
        if not (0.0 <= epsilon <= 1.0):
            raise ValueError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon
        scale = epsilon / (4.0 * self.n)
        noise = rng.uniform(-scale, scale, self.n)
        self.state = WoeState(cumulative_woe=noise.copy(), tie_noise=noise)

    def step(self, losses: Sequence[float]) -> RoundRecord:
        losses = np.asarray(losses, dtype=float)
        self.t += 1
        selected = _argmin_tiebreak(self.state.cumulative_woe, self.rng)
        cand: int | None = None
        if self.rng.random() < self.epsilon:
            cand = int(self.rng.integers(self.n))
        woe = np.zeros(self.n, dtype=int)
        if cand is not None:
            w = int(self.rng.random() < _sad_success(losses[cand]))
            woe[cand] = w
            self.state.cumulative_woe[cand] += w
        observed = (selected,) if cand is None else (selected, cand)
        return RoundRecord(
            round=self.t,
            candidate=cand,
            selected=selected,
            observed_losses=_observed(losses, observed),
            exploration_flag=cand is not None,
            woe_draws=woe.tolist(),
        )


class HappyLottery(Mechanism):
    """Point-accumulating happy lottery: select the expert with the most points.

    One point is awarded per round to a single expert drawn from the point
    distribution; ties in the argmax are broken uniformly.
    """

    def __init__(self, n_experts, rng, point_fn):
        super().__init__(n_experts, rng)
        self.point_fn = point_fn
        self.points = np.zeros(n_experts, dtype=int)

    def step(self, losses: Sequence[float]) -> RoundRecord:
        losses = np.asarray(losses, dtype=float)
        self.t += 1
        selected = _argmax_tiebreak(self.points, self.rng)
        probs = np.array([self.point_fn(losses, i) for i in range(self.n)])
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum()
        winner = int(self.rng.choice(self.n, p=probs))
        self.points[winner] += 1
        draws = np.zeros(self.n, dtype=int)
        draws[winner] = 1
        return RoundRecord(
            round=self.t,
            candidate=winner,
            selected=selected,
            observed_losses=_observed(losses, range(self.n)),
            exploration_flag=False,
            woe_draws=draws.tolist(),
        )


class OnlineIelf(HappyLottery):
    kind = MechanismKind.ONLINE_IELF

    def __init__(self, n_experts, rng):
        super().__init__(n_experts, rng, ielf_point_probability)


class ElfX(HappyLottery):
    kind = MechanismKind.ELF_X

    def __init__(self, n_experts, rng):
        super().__init__(n_experts, rng, elfx_point_probability)


class MultipleDraws(Mechanism):
    """Sad lottery with independent per-expert draws, redrawn each round.

    Every past (expert, round) pair independently draws a sad point with
    probability 1/2 + loss/4 (no 1/N candidate thinning); the least-woe
    expert is selected with uniform tie-breaking. This variant is the
    negative control: it is not incentive compatible.
    """

    kind = MechanismKind.MULTIPLE_DRAWS

    def __init__(self, n_experts, rng):
        super().__init__(n_experts, rng)
        self.history: list[np.ndarray] = []

    def step(self, losses: Sequence[float]) -> RoundRecord:
        losses = np.asarray(losses, dtype=float)
        self.t += 1
        sums = np.zeros(self.n)
        for l in self.history:
            sums += self.rng.random(self.n) < (0.5 + 0.25 * l)
        selected = _argmin_tiebreak(sums, self.rng)
        self.history.append(losses)
        return RoundRecord(
            round=self.t,
            candidate=None,
            selected=selected,
            observed_losses=_observed(losses, range(self.n)),
            exploration_flag=False,
            woe_draws=[0] * self.n,
        )


def make_mechanism(
    kind: MechanismKind,
    n_experts: int,
    rng: np.random.Generator,
    epsilon: float = 1.0,
    freeze_candidates: bool = False,
) -> Mechanism:
    kind = MechanismKind(kind)
    if kind == MechanismKind.FPL_ELF:
        return FplElf(n_experts, rng, freeze_candidates=freeze_candidates)
    if kind == MechanismKind.FPL_SELF:
        return FplSelf(n_experts, rng)
    if kind == MechanismKind.FPL_ELF_EPS:
        return FplElfEps(n_experts, rng, epsilon)
    if kind == MechanismKind.FPL_SELF_EPS:
        return FplSelfEps(n_experts, rng, epsilon)
    if kind == MechanismKind.ONLINE_IELF:
        return OnlineIelf(n_experts, rng)
    if kind == MechanismKind.ELF_X:
        return ElfX(n_experts, rng)
    if kind == MechanismKind.MULTIPLE_DRAWS:
        return MultipleDraws(n_experts, rng)
    if kind == MechanismKind.DECOUPLED:
        return Decoupled(n_experts, rng)
    raise ValueError(f"unknown mechanism kind {kind}")


# ---------------------------------------------------------------------------
# Exact selection distributions via DP over sad-point count vectors
# ---------------------------------------------------------------------------


def _apply_single_gain(
    states: dict[tuple, float], gains: list[tuple[int | None, float]]
) -> dict[tuple, float]:
    """One DP round where at most one expert's count can increment."""
    out: dict[tuple, float] = {}
    for counts, prob in states.items():
        for expert, p in gains:
            if p <= 0.0:
                continue
            key = counts
            if expert is not None:
                lst = list(counts)
                lst[expert] += 1
                key = tuple(lst)
            out[key] = out.get(key, 0.0) + prob * p
    return out


def _single_candidate_gains(losses: np.ndarray) -> list[tuple[int | None, float]]:
    """Uniform candidate, sad point with prob 1/2 + loss/4: full-information kinds."""
    n = losses.size
    gains: list[tuple[int | None, float]] = []
    none_mass = 1.0
    for j in range(n):
        p = _sad_success(losses[j]) / n
        gains.append((j, p))
        none_mass -= p
    gains.append((None, none_mass))
    return gains


def _exploration_flag_gains(losses: np.ndarray, epsilon: float) -> list[tuple[int | None, float]]:
    """Exploration flag, then uniform candidate, then the sad-point draw."""
    n = losses.size
    gains: list[tuple[int | None, float]] = [(None, 1.0 - epsilon)]
    none_extra = 0.0
    for j in range(n):
        q = _sad_success(losses[j])
        gains.append((j, epsilon * q / n))
        none_extra += epsilon * (1.0 - q) / n
    gains.append((None, none_extra))
    return gains


def _mixed_candidate_gains(losses: np.ndarray, epsilon: float) -> list[tuple[int | None, float]]:
    """Candidate from (1-eps) dummy + eps uniform, then the sad-point draw."""
    n = losses.size
    gains: list[tuple[int | None, float]] = []
    none_mass = 1.0 - epsilon
    for j in range(n):
        q = _sad_success(losses[j])
        gains.append((j, (epsilon / n) * q))
        none_mass += (epsilon / n) * (1.0 - q)
    gains.append((None, none_mass))
    return gains


def _general_elf_gains(losses: np.ndarray, params: ElfParams) -> list[tuple[int | None, float]]:
    dist = general_elf_winner_distribution(losses, params)
    gains: list[tuple[int | None, float]] = [(None, float(dist[0]))]
    gains.extend((j, float(dist[j + 1])) for j in range(losses.size))
    return gains


def _happy_point_gains(losses: np.ndarray, point_fn) -> list[tuple[int | None, float]]:
    probs = np.array([point_fn(losses, i) for i in range(losses.size)])
    return [(j, float(p)) for j, p in enumerate(probs)]


def _apply_independent_gains(
    states: dict[tuple, float], probs: np.ndarray
) -> dict[tuple, float]:
    """One DP round where every expert independently gains a point."""
    n = probs.size
    out: dict[tuple, float] = {}
    for counts, prob in states.items():
        for mask in range(1 << n):
            p = prob
            lst = list(counts)
            for j in range(n):
                if mask >> j & 1:
                    p *= probs[j]
                    lst[j] += 1
                else:
                    p *= 1.0 - probs[j]
            if p > 0.0:
                key = tuple(lst)
                out[key] = out.get(key, 0.0) + p
    return out


def split_ties(counts_dist: dict[tuple, float], n: int, maximize: bool = False) -> np.ndarray:
    """Turn a count-vector distribution into a selection distribution.

    Ties go uniformly to each tied expert: the continuous tie noise is
    i.i.d. across experts, so conditional on an integer tie every tied
    expert is least (or greatest) equally often.
    """
    out = np.zeros(n)
    for counts, prob in counts_dist.items():
        arr = np.asarray(counts)
        best = arr.max() if maximize else arr.min()
        idx = np.flatnonzero(arr == best)
        out[idx] += prob / idx.size
    return out


def woe_count_distribution(
    kind: MechanismKind,
    loss_matrix: np.ndarray,
    upto_round: int,
    epsilon: float = 1.0,
    params: ElfParams | None = None,
) -> dict[tuple, float]:
    """Exact joint distribution of the sad-point (or happy-point) count vector
    accumulated over rounds 1..upto_round."""
    kind = MechanismKind(kind)
    n = loss_matrix.shape[0]
    states: dict[tuple, float] = {tuple([0] * n): 1.0}
    for s in range(upto_round):
        losses = loss_matrix[:, s]
        if kind in (MechanismKind.FPL_ELF, MechanismKind.FPL_SELF, MechanismKind.DECOUPLED):
            states = _apply_single_gain(states, _single_candidate_gains(losses))
        elif kind == MechanismKind.FPL_ELF_EPS:
            states = _apply_single_gain(states, _exploration_flag_gains(losses, epsilon))
        elif kind == MechanismKind.FPL_SELF_EPS:
            states = _apply_single_gain(states, _mixed_candidate_gains(losses, epsilon))
        elif kind == MechanismKind.ONLINE_IELF:
            states = _apply_single_gain(states, _happy_point_gains(losses, ielf_point_probability))
        elif kind == MechanismKind.ELF_X:
            states = _apply_single_gain(states, _happy_point_gains(losses, elfx_point_probability))
        elif kind == MechanismKind.MULTIPLE_DRAWS:
            states = _apply_independent_gains(states, 0.5 + 0.25 * losses)
        else:
            raise ValueError(f"no exact oracle for kind {kind}")
    return states


def general_elf_count_distribution(
    loss_matrix: np.ndarray, upto_round: int, params: ElfParams
) -> dict[tuple, float]:
    """Count-vector distribution for the generalized sad lottery."""
    states: dict[tuple, float] = {tuple([0] * loss_matrix.shape[0]): 1.0}
    for s in range(upto_round):
        states = _apply_single_gain(states, _general_elf_gains(loss_matrix[:, s], params))
    return states


def selection_distribution_exact(
    kind: MechanismKind,
    loss_matrix: np.ndarray,
    round: int,
    epsilon: float = 1.0,
    params: ElfParams | None = None,
    condition_on_exploitation: bool = False,
) -> np.ndarray:
    """Exact marginal Pr(I_round = j) for every expert j.

    ``loss_matrix`` is (N, T) with T >= round - 1; only the first round-1
    columns are used. For the exploration-separated kind the unconditional
    law mixes the uniform exploration round with the exploitation argmin;
    ``condition_on_exploitation`` returns just the argmin part.
    """
    kind = MechanismKind(kind)
    loss_matrix = np.asarray(loss_matrix, dtype=float)
    n = loss_matrix.shape[0]
    if n * round > MAX_EXACT_CELLS:
        raise InstanceTooLarge(f"n*round = {n * round} exceeds {MAX_EXACT_CELLS}")
    if loss_matrix.shape[1] < round - 1:
        raise ValueError("loss matrix has fewer than round-1 columns")
    counts = woe_count_distribution(kind, loss_matrix, round - 1, epsilon, params)
    maximize = kind in (MechanismKind.ONLINE_IELF, MechanismKind.ELF_X)
    base = split_ties(counts, n, maximize=maximize)
    if kind == MechanismKind.FPL_ELF_EPS and not condition_on_exploitation:
        return epsilon / n + (1.0 - epsilon) * base
    return base


def general_elf_selection_exact(
    loss_matrix: np.ndarray, round: int, params: ElfParams
) -> np.ndarray:
    """Exact selection distribution for the generalized sad lottery."""
    loss_matrix = np.asarray(loss_matrix, dtype=float)
    n = loss_matrix.shape[0]
    if n * round > MAX_EXACT_CELLS:
        raise InstanceTooLarge(f"n*round = {n * round} exceeds {MAX_EXACT_CELLS}")
    counts = general_elf_count_distribution(loss_matrix, round - 1, params)
    return split_ties(counts, n)


def reconstruct_noise(
    records: Sequence[RoundRecord],
    loss_matrix: np.ndarray,
    n_experts: int,
    epsilon: float = 1.0,
) -> np.ndarray:
    """Recover the FPL noise X_{j,t} = (4N/eps) W_{j,t} - 2 - loss_{j,t} per round.

    Uses the recorded per-round woe draws (all-zero convention on
    exploitation rounds), so each X column is zero-mean and lies in
    [-3, 4N/eps].
    """
    scale = 4.0 * n_experts / epsilon
    woe = np.array([r.woe_draws for r in records], dtype=float).T  # (N, T)
    return scale * woe - 2.0 - np.asarray(loss_matrix, dtype=float)[:, : woe.shape[1]]
