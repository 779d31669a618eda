"""Exact incentive-compatibility auditing.

The auditor computes an expert's subjective probability of being selected
at a future target round, exactly, by enumerating its finite-support
belief atoms jointly with the mechanism's lottery outcomes. On top of that
sit a grid + golden-section best-response search, a truthfulness audit,
and the multiple-draws counterexample with its closed-form objective.

The audit is a falsification harness, not a proof: beliefs are finite
mixtures and strictness is certified at grid resolution only.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .mechanisms import (
    InstanceTooLarge,
    MechanismKind,
    general_elf_selection_exact,
    selection_distribution_exact,
)
from .scoring import BRIER, ElfParams, LossFn

MAX_LEAVES = 10_000_000

GENERAL_ELF = "general_elf"


def _normalize_kind(kind) -> MechanismKind | str:
    if kind == GENERAL_ELF:
        return GENERAL_ELF
    return MechanismKind(kind)


def _sad_success(loss: float) -> float:
    return 0.5 + 0.25 * loss


@dataclass(frozen=True)
class BeliefAtom:
    """One mixture component of a round's joint (outcome, rival reports) law.

    Within the atom the outcome is Bernoulli(outcome_prob), independent of
    the (deterministic) rival report vector; correlation between outcome
    and rivals is expressed by mixing atoms.
    """

    prob: float
    outcome_prob: float
    rival_reports: tuple[float, ...]


@dataclass
class BeliefModel:
    """A single expert's belief-independent joint law, factorized by round."""

    expert: int
    n_experts: int
    rounds: list[list[BeliefAtom]]

    def __post_init__(self):
        for t, atoms in enumerate(self.rounds):
            total = sum(a.prob for a in atoms)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"round {t + 1} atom probabilities sum to {total}")
            for a in atoms:
                if len(a.rival_reports) != self.n_experts - 1:
                    raise ValueError("rival report vector has wrong length")

    @property
    def horizon(self) -> int:
        return len(self.rounds)

    def truthful_report(self, round_index: int) -> float:
        """Marginal success probability of the round's outcome (1-based round)."""
        atoms = self.rounds[round_index - 1]
        return sum(a.prob * a.outcome_prob for a in atoms)

    def full_reports(self, round_index: int, my_report: float, atom: BeliefAtom) -> np.ndarray:
        out = np.empty(self.n_experts)
        rival_iter = iter(atom.rival_reports)
        for j in range(self.n_experts):
            out[j] = my_report if j == self.expert else next(rival_iter)
        return out


@dataclass(frozen=True)
class TargetWeights:
    """Nonnegative weights over future target rounds; at least one positive.

    Auditing every single-target weight vector suffices: maximizing the
    selection probability at each future round separately maximizes any
    weighted sum of them.
    """

    weights: Mapping[int, float]

    def __post_init__(self):
        if not any(w > 0 for w in self.weights.values()):
            raise ValueError("need at least one strictly positive weight")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be nonnegative")

    def single_targets(self) -> list[int]:
        return sorted(t for t, w in self.weights.items() if w > 0)


@dataclass
class FullInfoHistory:
    """Realized losses of the rounds before the decision round."""

    losses: np.ndarray  # (N, t-1)

    @property
    def n_rounds(self) -> int:
        return self.losses.shape[1] if self.losses.size else 0


@dataclass
class BanditHistory:
    """Transcript of an exploration-separated mechanism's past rounds.

    flags[s] says whether past round s+1 was an exploration round; pool
    holds (candidate, candidate loss) for the exploration rounds in order.
    Exploitation rounds leave no persistent state behind.
    """

    flags: list[bool]
    pool: list[tuple[int, float]]

    @property
    def n_rounds(self) -> int:
        return len(self.flags)


@dataclass
class AuditReport:
    """Outcome of one truthfulness check at a (decision, target) round pair.

    ``margin`` is the strict margin against every non-adjacent grid report;
    ``full_margin`` compares the truthful probability against the whole
    grid (zero when the truthful report sits on the grid and wins, strictly
    negative when some grid report beats it).
    """

    kind: str
    belief_id: int
    decision_round: int
    target_round: int
    history_id: int
    truthful_report: float
    prob_truthful: float
    best_grid_report: float
    prob_best_grid: float
    margin: float
    full_margin: float
    passed: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _belief_leaves(belief: BeliefModel, rounds: Sequence[int], loss: LossFn,
                   reports: Mapping[int, float]):
    """Yield (probability, {round: loss_vector}) over the atom/outcome product."""
    atom_lists = [belief.rounds[t - 1] for t in rounds]
    n_leaves = 1
    for atoms in atom_lists:
        n_leaves *= 2 * len(atoms)
    if n_leaves > MAX_LEAVES:
        raise InstanceTooLarge(f"{n_leaves} belief leaves exceed {MAX_LEAVES}")
    for combo in itertools.product(*[range(len(a)) for a in atom_lists]):
        for outcomes in itertools.product((0, 1), repeat=len(rounds)):
            prob = 1.0
            cols: dict[int, np.ndarray] = {}
            for t, ai, o in zip(rounds, combo, outcomes):
                atom = belief.rounds[t - 1][ai]
                p_o = atom.outcome_prob if o == 1 else 1.0 - atom.outcome_prob
                prob *= atom.prob * p_o
                if prob == 0.0:
                    break
                rep = belief.full_reports(t, reports[t], atom)
                cols[t] = np.array([loss(r, o) for r in rep])
            else:
                if prob > 0.0:
                    yield prob, cols
                continue
            # zero-probability branch: skip


def _elf_eps_exploit_prob(pool: Sequence[tuple[int, float]], n: int, expert: int) -> float:
    """P(argmin of the redrawn pool woes = expert), ties uniform."""
    total = 0.0
    entries = list(pool)
    for mask in range(1 << len(entries)):
        counts = [0] * n
        p = 1.0
        for b, (cand, loss) in enumerate(entries):
            q = _sad_success(loss)
            if mask >> b & 1:
                p *= q
                counts[cand] += 1
            else:
                p *= 1.0 - q
        arr = np.asarray(counts)
        idx = np.flatnonzero(arr == arr.min())
        if expert in idx:
            total += p / idx.size
    return total


def _elf_eps_selection_prob(
    history: BanditHistory,
    future_cols: list[np.ndarray],
    epsilon: float,
    n: int,
    expert: int,
) -> float:
    """Pr(selected at the round after the last future column), conditioning on
    the history transcript; future exploration flags are the mechanism's own
    randomness and get integrated out."""
    pools = [(1.0, tuple(history.pool))]
    for col in future_cols:
        nxt = []
        for prob, pool in pools:
            nxt.append((prob * (1.0 - epsilon), pool))
            for j in range(n):
                nxt.append((prob * epsilon / n, pool + ((j, float(col[j])),)))
        pools = nxt
    total = 0.0
    for prob, pool in pools:
        total += prob * (epsilon / n + (1.0 - epsilon) * _elf_eps_exploit_prob(pool, n, expert))
    return total


def selection_probability(
    kind: MechanismKind | str,
    belief: BeliefModel,
    my_reports: Mapping[int, float],
    target_round: int,
    loss: LossFn = BRIER,
    epsilon: float = 1.0,
    params: ElfParams | None = None,
    history: FullInfoHistory | BanditHistory | None = None,
) -> float:
    """Exact subjective probability that the expert is selected at target_round.

    ``my_reports`` maps each round from the decision round through
    target_round - 1 to the expert's planned report; rounds it omits are
    reported truthfully. Histories fix the rounds before the decision
    round: realized losses in the full-information case, the transcript in
    the bandit case.
    """
    kind = _normalize_kind(kind)
    n = belief.n_experts
    t0 = (history.n_rounds if history is not None else 0) + 1
    future_rounds = list(range(t0, target_round))
    reports = {
        t: my_reports.get(t, belief.truthful_report(t)) for t in future_rounds
    }
    bandit = kind == MechanismKind.FPL_ELF_EPS
    if bandit and history is None:
        history = BanditHistory(flags=[], pool=[])
    if bandit and not isinstance(history, BanditHistory):
        raise ValueError("the exploration-separated kind needs a BanditHistory")

    total = 0.0
    for prob, cols in _belief_leaves(belief, future_rounds, loss, reports):
        if bandit:
            future_cols = [cols[t] for t in future_rounds]
            p_sel = _elf_eps_selection_prob(history, future_cols, epsilon, n, belief.expert)
        else:
            matrix = np.zeros((n, max(target_round - 1, 1)))
            if history is not None:
                matrix[:, : history.n_rounds] = history.losses
            for t in future_rounds:
                matrix[:, t - 1] = cols[t]
            if kind == GENERAL_ELF:
                dist = general_elf_selection_exact(matrix, target_round, params)
            else:
                dist = selection_distribution_exact(
                    kind, matrix, target_round, epsilon=epsilon, params=params
                )
            p_sel = float(dist[belief.expert])
        total += prob * p_sel
    return total


def report_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.linspace(0.0, 1.0, n + 1)


def best_response(
    kind,
    belief: BeliefModel,
    decision_round: int,
    target_round: int,
    grid_step: float = 0.01,
    refine_tol: float = 1e-5,
    **kwargs,
) -> tuple[float, float]:
    """Grid scan plus golden-section refinement of the selection probability.

    Returns (r_star, value). The selection probability is piecewise
    polynomial of low degree in the report, so a 0.01 grid brackets every
    maximizer and the local refinement pins it down.
    """

    def objective(r: float) -> float:
        return selection_probability(
            kind, belief, {decision_round: float(r)}, target_round, **kwargs
        )

    grid = report_grid(grid_step)
    values = np.array([objective(r) for r in grid])
    i = int(np.argmax(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    if lo == hi:
        return float(grid[i]), float(values[i])
    res = minimize_scalar(
        lambda r: -objective(min(max(r, 0.0), 1.0)),
        bracket=(lo, grid[i], hi) if lo < grid[i] < hi else None,
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": refine_tol},
    )
    r_star = float(min(max(res.x, 0.0), 1.0))
    v_star = -float(res.fun)
    if values[i] > v_star:
        return float(grid[i]), float(values[i])
    return r_star, v_star


def audit_single(
    kind,
    belief: BeliefModel,
    decision_round: int,
    target_round: int,
    grid_step: float = 0.01,
    belief_id: int = 0,
    history_id: int = 0,
    history=None,
    **kwargs,
) -> AuditReport:
    """Check that truthful reporting is the grid argmax with positive margin.

    Passing requires three things: the truthful probability is not beaten
    anywhere on the grid, the grid argmax is the grid point nearest the
    truthful report, and the truthful probability strictly beats every
    non-adjacent grid report. The first condition catches sub-grid-size
    violations (a grid report nudging out an on-grid truthful report).
    """
    b = belief.truthful_report(decision_round)
    grid = report_grid(grid_step)
    values = np.array(
        [
            selection_probability(
                kind, belief, {decision_round: float(r)}, target_round,
                history=history, **kwargs,
            )
            for r in grid
        ]
    )
    prob_truthful = selection_probability(
        kind, belief, {decision_round: b}, target_round, history=history, **kwargs
    )
    i = int(np.argmax(values))
    full_margin = float(prob_truthful - values[i])
    non_adjacent = np.abs(grid - b) > grid_step + 1e-12
    margin = float(prob_truthful - values[non_adjacent].max()) if non_adjacent.any() else np.inf
    passed = bool(
        full_margin >= -1e-12
        and abs(grid[i] - b) <= grid_step / 2 + 1e-12
        and margin > 0.0
    )
    return AuditReport(
        kind=str(getattr(kind, "value", kind)),
        belief_id=belief_id,
        decision_round=decision_round,
        target_round=target_round,
        history_id=history_id,
        truthful_report=float(b),
        prob_truthful=float(prob_truthful),
        best_grid_report=float(grid[i]),
        prob_best_grid=float(values[i]),
        margin=margin,
        full_margin=full_margin,
        passed=passed,
    )


def random_belief(
    rng: np.random.Generator,
    expert: int,
    n_experts: int,
    horizon: int,
    max_atoms: int = 2,
    interior: bool = False,
) -> BeliefModel:
    """A random finite-support factorized belief for audit suites.

    ``interior`` keeps outcome probabilities and rival reports away from
    the endpoints, which the happy-lottery kinds need so every point
    probability stays positive.
    """
    lo, hi = (0.15, 0.85) if interior else (0.0, 1.0)
    rounds = []
    for _ in range(horizon):
        k = int(rng.integers(1, max_atoms + 1))
        probs = rng.dirichlet(np.ones(k))
        atoms = [
            BeliefAtom(
                prob=float(probs[a]),
                outcome_prob=float(rng.uniform(lo, hi)),
                rival_reports=tuple(rng.uniform(lo, hi, n_experts - 1).tolist()),
            )
            for a in range(k)
        ]
        rounds.append(atoms)
    return BeliefModel(expert=expert, n_experts=n_experts, rounds=rounds)


def sample_full_info_history(
    belief: BeliefModel, n_rounds: int, rng: np.random.Generator, loss: LossFn = BRIER
) -> FullInfoHistory:
    """Realize past rounds from the belief, with the expert reporting truthfully."""
    cols = []
    for t in range(1, n_rounds + 1):
        atoms = belief.rounds[t - 1]
        ai = rng.choice(len(atoms), p=[a.prob for a in atoms])
        atom = atoms[ai]
        o = int(rng.random() < atom.outcome_prob)
        reports = belief.full_reports(t, belief.truthful_report(t), atom)
        cols.append([loss(r, o) for r in reports])
    losses = np.array(cols).T if cols else np.zeros((belief.n_experts, 0))
    return FullInfoHistory(losses=losses)


def sample_bandit_history(
    belief: BeliefModel,
    n_rounds: int,
    epsilon: float,
    rng: np.random.Generator,
    loss: LossFn = BRIER,
) -> BanditHistory:
    """Sample a transcript (flags + exploration pool) of past rounds."""
    flags: list[bool] = []
    pool: list[tuple[int, float]] = []
    for t in range(1, n_rounds + 1):
        explore = bool(rng.random() < epsilon)
        flags.append(explore)
        if explore:
            cand = int(rng.integers(belief.n_experts))
            atoms = belief.rounds[t - 1]
            ai = rng.choice(len(atoms), p=[a.prob for a in atoms])
            atom = atoms[ai]
            o = int(rng.random() < atom.outcome_prob)
            reports = belief.full_reports(t, belief.truthful_report(t), atom)
            pool.append((cand, loss(float(reports[cand]), o)))
    return BanditHistory(flags=flags, pool=pool)


def ic_audit(
    kind,
    belief_suite: Sequence[BeliefModel],
    grid_step: float = 0.01,
    loss: LossFn = BRIER,
    epsilon: float = 1.0,
    params: ElfParams | None = None,
    histories_per_round: int = 3,
    bandit_transcripts: int = 10,
    seed: int = 0,
) -> list[AuditReport]:
    """Audit truthfulness for every (decision round, target round) pair.

    Decision round 1 is audited unconditionally; later decision rounds are
    audited conditional on sampled histories (transcripts for the
    exploration-separated kind, per-transcript as the definition demands).
    """
    rng = np.random.default_rng(seed)
    bandit = _normalize_kind(kind) == MechanismKind.FPL_ELF_EPS
    reports: list[AuditReport] = []
    for belief_id, belief in enumerate(belief_suite):
        horizon = belief.horizon
        for decision in range(1, horizon + 1):
            for target in range(decision + 1, horizon + 2):
                if decision == 1:
                    histories = [None]
                elif bandit:
                    histories = [
                        sample_bandit_history(belief, decision - 1, epsilon, rng, loss)
                        for _ in range(bandit_transcripts)
                    ]
                else:
                    histories = [
                        sample_full_info_history(belief, decision - 1, rng, loss)
                        for _ in range(histories_per_round)
                    ]
                for hid, history in enumerate(histories):
                    reports.append(
                        audit_single(
                            kind, belief, decision, target,
                            grid_step=grid_step, belief_id=belief_id, history_id=hid,
                            history=history, loss=loss, epsilon=epsilon, params=params,
                        )
                    )
    return reports


def proper_loss_inequality_check(loss: LossFn) -> tuple[bool, bool]:
    """Which of l(1,1) < l(1,0) and l(0,0) < l(0,1) hold; at least one must."""
    first = loss(1.0, 1) < loss(1.0, 0)
    second = loss(0.0, 0) < loss(0.0, 1)
    if not (first or second):
        raise ValueError(f"loss {loss.name} satisfies neither endpoint inequality")
    return first, second


def multiple_draws_breaking_belief(loss: LossFn = BRIER) -> BeliefModel:
    """The two-round belief that breaks truthfulness under multiple draws.

    Round 1: a fair-coin outcome with the rival pinned at the endpoint
    report whose endpoint inequality holds. Round 2: a fair-coin outcome
    that the rival predicts perfectly.
    """
    first, _ = proper_loss_inequality_check(loss)
    rival_r1 = 1.0 if first else 0.0
    rounds = [
        [BeliefAtom(prob=1.0, outcome_prob=0.5, rival_reports=(rival_r1,))],
        [
            BeliefAtom(prob=0.5, outcome_prob=1.0, rival_reports=(1.0,)),
            BeliefAtom(prob=0.5, outcome_prob=0.0, rival_reports=(0.0,)),
        ],
    ]
    return BeliefModel(expert=0, n_experts=2, rounds=rounds)


def multiple_draws_closed_form(
    r1: float, r2: float, loss: LossFn = BRIER, rival_r1: float = 1.0
) -> float:
    """Closed-form selection probability at round 3 under multiple draws.

    Expands the eleven winning/tied sad-point configurations of the
    two-expert two-round game into polynomial form; must agree with the
    enumeration oracle to near machine precision.
    """
    total = 0.0
    for o1 in (0, 1):
        for o2 in (0, 1):
            a1 = 0.5 * loss(r1, o1)
            a2 = 0.5 * loss(r2, o2)
            b1 = 0.5 * loss(rival_r1, o1)
            b2 = 0.5 * loss(float(o2), o2)
            s = (
                a1 * b1 * (-a2 + b2)
                + a2 * b2 * (-a1 + b1)
                - 3.0 * (a1 + a2)
                + 3.0 * (b1 + b2)
                + 8.0
            )
            total += 0.25 * s / 16.0
    return total


@dataclass
class CounterexampleResult:
    belief: BeliefModel
    r_star: float
    value_at_r_star: float
    truthful_report: float
    value_at_truthful: float
    gap: float
    max_closed_form_error: float

    def to_dict(self) -> dict:
        return {
            "r_star": self.r_star,
            "value_at_r_star": self.value_at_r_star,
            "truthful_report": self.truthful_report,
            "value_at_truthful": self.value_at_truthful,
            "gap": self.gap,
            "deviation": abs(self.r_star - self.truthful_report),
            "max_closed_form_error": self.max_closed_form_error,
        }


def multiple_draws_counterexample(loss: LossFn = BRIER) -> CounterexampleResult:
    """Best response of the round-1 report targeting round 3 under multiple draws.

    Under the constructed belief the truthful report 1/2 is not optimal:
    the gap is strictly positive. Also cross-checks the closed-form
    polynomial objective against the enumeration oracle.
    """
    belief = multiple_draws_breaking_belief(loss)
    first, _ = proper_loss_inequality_check(loss)
    rival_r1 = 1.0 if first else 0.0
    b1 = belief.truthful_report(1)

    max_err = 0.0
    for r1 in np.linspace(0.0, 1.0, 21):
        for r2 in np.linspace(0.0, 1.0, 5):
            exact = selection_probability(
                MechanismKind.MULTIPLE_DRAWS, belief, {1: float(r1), 2: float(r2)},
                target_round=3, loss=loss,
            )
            closed = multiple_draws_closed_form(float(r1), float(r2), loss, rival_r1)
            max_err = max(max_err, abs(exact - closed))

    r_star, v_star = best_response(
        MechanismKind.MULTIPLE_DRAWS, belief, decision_round=1, target_round=3, loss=loss
    )
    v_truthful = selection_probability(
        MechanismKind.MULTIPLE_DRAWS, belief, {1: b1}, target_round=3, loss=loss
    )
    return CounterexampleResult(
        belief=belief,
        r_star=r_star,
        value_at_r_star=v_star,
        truthful_report=b1,
        value_at_truthful=v_truthful,
        gap=v_star - v_truthful,
        max_closed_form_error=max_err,
    )


def isolated_product_term_optimum(loss: LossFn = BRIER) -> float:
    """Minimizer C/(1+C) of the isolated round-1 product term, C = l(1,1)/l(1,0).

    When only the mirrored endpoint inequality holds the rival pins at 0
    and the minimizer reflects to 1 - C'/(1+C') with C' = l(0,0)/l(0,1).
    """
    first, _ = proper_loss_inequality_check(loss)
    if first:
        c = loss(1.0, 1) / loss(1.0, 0)
        return c / (1.0 + c)
    c = loss(0.0, 0) / loss(0.0, 1)
    return 1.0 - c / (1.0 + c)


def ci_c0_gap_check(
    kind,
    belief: BeliefModel,
    decision_round: int = 1,
    horizon: int | None = None,
    loss: LossFn = BRIER,
    epsilon: float = 1.0,
    params: ElfParams | None = None,
) -> dict:
    """Compute c_i = P(gap > 1) and c_0 = P(gap > 0) and assert c_i < c_0.

    The gap variable is min over rivals j of the woe difference
    (noise_j - noise_i) + sum over rounds != decision_round of (W_j - W_i).
    Integer woe differences reduce the tie noise to an exchangeable
    uniform order statistic, so each leaf contributes 1/(1 + #tied).
    """
    from .mechanisms import woe_count_distribution

    kind = kind if kind == GENERAL_ELF else MechanismKind(kind)
    n = belief.n_experts
    i = belief.expert
    horizon = horizon if horizon is not None else belief.horizon
    rounds = [t for t in range(1, horizon + 1) if t != decision_round]
    reports = {t: belief.truthful_report(t) for t in rounds}

    def threshold_prob(diff_counts: Mapping[tuple, float], c: int) -> float:
        total = 0.0
        for counts, prob in diff_counts.items():
            arr = np.asarray(counts)
            diffs = np.delete(arr, i) - arr[i]
            if diffs.min() <= c - 1:
                continue
            tied = int(np.sum(diffs == c))
            total += prob / (tied + 1)
        return total

    # joint count distribution over the non-decision rounds under the belief
    agg: dict[tuple, float] = {}
    zero_conf_prob = 0.0
    for prob, cols in _belief_leaves(belief, rounds, loss, reports):
        if rounds:
            matrix = np.column_stack([cols[t] for t in rounds])
        else:
            matrix = np.zeros((n, 0))
        if kind == GENERAL_ELF:
            from .mechanisms import general_elf_count_distribution

            dist = general_elf_count_distribution(matrix, len(rounds), params)
        else:
            dist = woe_count_distribution(kind, matrix, len(rounds), epsilon, params)
        for counts, p in dist.items():
            agg[counts] = agg.get(counts, 0.0) + prob * p
        zero_conf_prob += prob * dist.get(tuple([0] * n), 0.0)

    c_i = threshold_prob(agg, 1)
    c_0 = threshold_prob(agg, 0)
    gap = c_0 - c_i
    if gap <= 0.0:
        raise AssertionError(f"expected c_i < c_0, got c_i={c_i}, c_0={c_0}")
    return {
        "c_i": c_i,
        "c_0": c_0,
        "gap": gap,
        "all_woe_zero_prob": zero_conf_prob,
    }
