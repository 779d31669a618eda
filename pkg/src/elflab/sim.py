"""Protocol runner, adversaries, regret accounting, and scaling experiments.

Two simulation engines live here. ``run_trajectory`` drives the step
machines from :mod:`elflab.mechanisms` one round at a time and keeps full
per-round records. The ``*_batch`` functions are vectorized engines used
by the scaling experiments: they run all replications simultaneously for
the stabilized kinds, whose per-round selection marginals provably match
the redrawing kinds (the exact oracle tests pin this down, and the Monte
Carlo cross-checks in the test suite compare the engines directly).

Replications get independent streams from ``numpy.random.SeedSequence``
spawning, so results are reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .incentives import BeliefAtom, BeliefModel
from .mechanisms import (
    MechanismKind,
    RegretBoundParams,
    RoundRecord,
    WoeState,
    make_mechanism,
    selection_distribution_exact,
)
from .scoring import BRIER, LossFn


@dataclass
class LossMatrix:
    """Per-expert per-round losses in [0, 1], fixed by an oblivious adversary."""

    values: np.ndarray
    provenance: str = "explicit"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("loss matrix must be N x T")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ValueError("losses must lie in [0, 1]")

    @property
    def n_experts(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]


@dataclass
class Trajectory:
    """Everything one simulated run produced, enough to re-derive its regret."""

    kind: str
    seed: int
    n_experts: int
    records: list[RoundRecord]
    mechanism_loss: float
    expert_losses: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.records)

    def regret(self) -> float:
        return self.mechanism_loss - float(self.expert_losses.min())

    def to_json_lines(self) -> str:
        return "\n".join(r.to_json_line() for r in self.records)


def run_trajectory(
    kind: MechanismKind | str,
    loss_matrix: LossMatrix | np.ndarray,
    seed: int,
    epsilon: float = 1.0,
    freeze_candidates: bool = False,
) -> Trajectory:
    """Run one mechanism over a fixed loss matrix; deterministic given the seed."""
    matrix = loss_matrix.values if isinstance(loss_matrix, LossMatrix) else np.asarray(loss_matrix, dtype=float)
    n, horizon = matrix.shape
    rng = np.random.default_rng(seed)
    mech = make_mechanism(MechanismKind(kind), n, rng, epsilon=epsilon,
                          freeze_candidates=freeze_candidates)
    records: list[RoundRecord] = []
    mech_loss = 0.0
    for t in range(horizon):
        rec = mech.step(matrix[:, t])
        records.append(rec)
        mech_loss += float(matrix[rec.selected, t])
    return Trajectory(
        kind=str(MechanismKind(kind).value),
        seed=seed,
        n_experts=n,
        records=records,
        mechanism_loss=mech_loss,
        expert_losses=matrix.sum(axis=1),
    )


def belief_regret(traj: Trajectory, loss_matrix: LossMatrix | np.ndarray | None = None) -> float:
    """Mechanism loss minus the best expert's loss, both on internal beliefs.

    With truthful experts (the default everywhere here) this equals the
    loss-matrix regret; recomputing from the records must agree with the
    incrementally accumulated value.
    """
    if loss_matrix is not None:
        matrix = loss_matrix.values if isinstance(loss_matrix, LossMatrix) else np.asarray(loss_matrix)
        recomputed = sum(float(matrix[r.selected, r.round - 1]) for r in traj.records)
        if abs(recomputed - traj.mechanism_loss) > 1e-9:
            raise AssertionError("recomputed mechanism loss disagrees with the running total")
    return traj.regret()


@dataclass
class LeadPack:
    """Experts within strictly less than one sad point of the minimum."""

    round: int
    members: tuple[int, ...]


def lead_pack(state: WoeState, round_index: int = 0) -> LeadPack:
    cum = state.cumulative_woe
    members = tuple(int(j) for j in np.flatnonzero(cum < cum.min() + 1.0))
    return LeadPack(round=round_index, members=members)


# ---------------------------------------------------------------------------
# Adversaries / scenario generators
# ---------------------------------------------------------------------------


def adversary_alternating(n_experts: int, horizon: int) -> LossMatrix:
    """The two-expert alternating matrix ((1,0,1,0,...),(0,1,0,1,...))."""
    if n_experts != 2:
        raise ValueError("the alternating adversary is defined for two experts")
    if horizon % 2 != 0:
        raise ValueError("horizon must be even")
    row = np.arange(horizon) % 2
    values = np.vstack([1 - row, row]).astype(float)
    return LossMatrix(values=values, provenance="explicit")


def adversary_bernoulli_beliefs(
    n_experts: int,
    horizon: int,
    belief_means: Sequence[float | None],
    seed: int,
    loss: LossFn = BRIER,
    width: float = 0.0,
    outcome_prob: float = 0.5,
) -> tuple[list[BeliefModel], LossMatrix]:
    """Oblivious Bernoulli-belief scenario with truthful reporting.

    Expert j's per-round belief is drawn once, uniformly within ``width``
    of ``belief_means[j]`` (clipped to [0, 1]); a mean of None makes the
    expert clairvoyant (it believes the realized outcome). Outcomes are
    i.i.d. Bernoulli(outcome_prob). Losses are the truthful reports scored
    against the realized outcomes.
    """
    if len(belief_means) != n_experts:
        raise ValueError("need one belief mean per expert")
    rng = np.random.default_rng(seed)
    outcomes = (rng.random(horizon) < outcome_prob).astype(int)
    beliefs = np.empty((n_experts, horizon))
    for j, mean in enumerate(belief_means):
        if mean is None:
            beliefs[j] = outcomes
        else:
            beliefs[j] = np.clip(
                mean + rng.uniform(-width, width, horizon), 0.0, 1.0
            )
    losses = np.empty((n_experts, horizon))
    for j in range(n_experts):
        for t in range(horizon):
            losses[j, t] = loss(float(beliefs[j, t]), int(outcomes[t]))
    models = []
    for i in range(n_experts):
        rounds = []
        for t in range(horizon):
            rivals = tuple(float(beliefs[j, t]) for j in range(n_experts) if j != i)
            rounds.append([BeliefAtom(prob=1.0, outcome_prob=float(beliefs[i, t]), rival_reports=rivals)])
        models.append(BeliefModel(expert=i, n_experts=n_experts, rounds=rounds))
    return models, LossMatrix(values=losses, provenance="generated-from-beliefs")


@dataclass(frozen=True)
class BeliefScenario:
    """Streaming loss-column sampler for the vectorized engines.

    Per round, expert j's belief is clip(1/2 + skill_j * (o - 1/2) + u)
    with u uniform within ``width`` and a shared Bernoulli(outcome_prob)
    outcome; the loss column is the Brier score of the truthful report.
    Skill 1 is clairvoyant, 0 uninformed, negative contrarian. Experts
    sharing a skill level race each other through their independent noise,
    which keeps the hindsight-best identity random.
    """

    skills: tuple[float, ...]
    width: float = 0.15
    outcome_prob: float = 0.5

    @property
    def n_experts(self) -> int:
        return len(self.skills)

    def column(self, replications: int, rng: np.random.Generator) -> np.ndarray:
        skills = np.asarray(self.skills)
        o = (rng.random(replications) < self.outcome_prob).astype(float)
        b = np.clip(
            0.5
            + skills[None, :] * (o[:, None] - 0.5)
            + rng.uniform(-self.width, self.width, (replications, skills.size)),
            0.0,
            1.0,
        )
        return (b - o[:, None]) ** 2


def default_scenario(n_experts: int) -> BeliefScenario:
    """Two skilled co-leaders plus contrarian stragglers.

    The tied skilled pair keeps the hindsight-best expert a genuine
    random-walk race, while the contrarians are bad enough that both the
    sad lottery's learning and the exploration cost of the bandit variant
    show up at desk scale.
    """
    skills = [0.8, 0.8]
    spread = [-0.5, -0.5, -0.3, -0.3, 0.2, 0.2]
    while len(skills) < n_experts:
        skills.append(spread[(len(skills) - 2) % len(spread)])
    return BeliefScenario(skills=tuple(skills[:n_experts]))


# ---------------------------------------------------------------------------
# Vectorized batch engines (stabilized kinds)
# ---------------------------------------------------------------------------


@dataclass
class BatchResult:
    """Per-replication regrets plus per-round occupancy statistics."""

    regrets: np.ndarray
    pack_gt1_freq: np.ndarray
    leader_change_freq: np.ndarray
    candidate_is_leader_freq: np.ndarray
    exploration_freq: np.ndarray
    noise_running_max: np.ndarray | None = None


def _column_source(
    source: LossMatrix | BeliefScenario, replications: int
) -> Callable[[int, np.random.Generator], np.ndarray]:
    if isinstance(source, LossMatrix):
        values = source.values

        def fixed(t: int, rng: np.random.Generator) -> np.ndarray:
            return np.broadcast_to(values[:, t], (replications, values.shape[0]))

        return fixed
    return lambda t, rng: source.column(replications, rng)


def simulate_self_batch(
    source: LossMatrix | BeliefScenario,
    horizon: int,
    replications: int,
    seed: int,
    epsilon: float = 1.0,
    n_experts: int | None = None,
    track_noise_at: int | None = None,
    elf_eps_mixture: bool = False,
) -> BatchResult:
    """All replications of a stabilized sad lottery, one numpy step per round.

    ``epsilon=1`` is the full-information kind; smaller values give the
    stabilized exploration-separated kind. With ``elf_eps_mixture`` the
    per-replication regret uses the exploration/exploitation mixture
    identity, which reproduces the exploration-separated mechanism's
    expected regret exactly (its exploitation-round selection law matches
    the stabilized kind's round for round).
    """
    n = n_experts or source.n_experts
    rng = np.random.default_rng(seed)
    reps = replications
    scale = epsilon / (4.0 * n)
    cum = rng.uniform(-scale, scale, (reps, n))
    expert_tot = np.zeros((reps, n))
    mech_tot = np.zeros(reps)
    pack_gt1 = np.zeros(horizon)
    changes = np.zeros(horizon)
    cand_is_leader = np.zeros(horizon)
    explo = np.zeros(horizon)
    noise_sums = np.zeros((reps, n))
    noise_max: np.ndarray | None = None
    column = _column_source(source, reps)
    rows = np.arange(reps)
    prev_sel = None
    for t in range(horizon):
        losses = column(t, rng)
        sel = np.argmin(cum, axis=1)
        pack_gt1[t] = np.mean(
            np.sum(cum < cum.min(axis=1, keepdims=True) + 1.0, axis=1) > 1
        )
        if prev_sel is not None:
            changes[t - 1] = np.mean(sel != prev_sel)
        if elf_eps_mixture:
            mech_tot += epsilon * losses.mean(axis=1) + (1.0 - epsilon) * losses[rows, sel]
        else:
            mech_tot += losses[rows, sel]
        expert_tot += losses
        u = rng.random(reps)
        cand = rng.integers(0, n, reps)
        active = u < epsilon
        cand_loss = losses[rows, cand]
        woe = (rng.random(reps) < 0.5 + 0.25 * cand_loss) & active
        cand_is_leader[t] = np.mean(active & (cand == sel))
        explo[t] = np.mean(active)
        np.add.at(cum, (rows[woe], cand[woe]), 1.0)
        if track_noise_at is not None and t < track_noise_at:
            w_mat = np.zeros((reps, n))
            w_mat[rows[woe], cand[woe]] = 1.0
            noise_sums += (4.0 * n / epsilon) * w_mat - 2.0 - losses
            if t == track_noise_at - 1:
                noise_max = np.abs(noise_sums).max(axis=1)
        prev_sel = sel
    regrets = mech_tot - expert_tot.min(axis=1)
    return BatchResult(
        regrets=regrets,
        pack_gt1_freq=pack_gt1,
        leader_change_freq=changes,
        candidate_is_leader_freq=cand_is_leader,
        exploration_freq=explo,
        noise_running_max=noise_max,
    )


def simulate_happy_batch(
    source: LossMatrix | BeliefScenario,
    horizon: int,
    replications: int,
    seed: int,
    point_kind: MechanismKind = MechanismKind.ONLINE_IELF,
) -> BatchResult:
    """Vectorized point-accumulating happy lottery (argmax selection)."""
    rival_over_all = MechanismKind(point_kind) == MechanismKind.ELF_X
    rng = np.random.default_rng(seed)
    reps = replications
    n = source.n_experts
    points = np.zeros((reps, n))
    expert_tot = np.zeros((reps, n))
    mech_tot = np.zeros(reps)
    column = _column_source(source, reps)
    rows = np.arange(reps)
    for t in range(horizon):
        losses = column(t, rng)
        # fresh sub-1 jitter breaks integer ties uniformly without reordering
        jitter = rng.random((reps, n)) * 0.5
        sel = np.argmax(points + jitter, axis=1)
        mech_tot += losses[rows, sel]
        expert_tot += losses
        total = losses.sum(axis=1, keepdims=True)
        if rival_over_all:
            probs = (1.0 - losses + total / n) / n
        else:
            probs = (1.0 - losses + (total - losses) / (n - 1)) / n
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(reps)
        winner = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
        np.add.at(points, (rows, np.clip(winner, 0, n - 1)), 1.0)
    regrets = mech_tot - expert_tot.min(axis=1)
    return BatchResult(
        regrets=regrets,
        pack_gt1_freq=np.zeros(horizon),
        leader_change_freq=np.zeros(horizon),
        candidate_is_leader_freq=np.zeros(horizon),
        exploration_freq=np.zeros(horizon),
    )


def regret_batch(
    kind: MechanismKind | str,
    source: LossMatrix | BeliefScenario,
    horizon: int,
    replications: int,
    seed: int,
    epsilon: float = 1.0,
) -> np.ndarray:
    """Per-replication regrets under the appropriate batch engine."""
    kind = MechanismKind(kind)
    if kind in (MechanismKind.FPL_ELF, MechanismKind.FPL_SELF, MechanismKind.DECOUPLED):
        return simulate_self_batch(source, horizon, replications, seed, epsilon=1.0).regrets
    if kind == MechanismKind.FPL_SELF_EPS:
        return simulate_self_batch(source, horizon, replications, seed, epsilon=epsilon).regrets
    if kind == MechanismKind.FPL_ELF_EPS:
        return simulate_self_batch(
            source, horizon, replications, seed, epsilon=epsilon, elf_eps_mixture=True
        ).regrets
    if kind in (MechanismKind.ONLINE_IELF, MechanismKind.ELF_X):
        return simulate_happy_batch(source, horizon, replications, seed, point_kind=kind).regrets
    raise ValueError(f"no batch engine for kind {kind}")


# ---------------------------------------------------------------------------
# Statistics operations
# ---------------------------------------------------------------------------


@dataclass
class LeadPackStats:
    rounds: np.ndarray
    pack_gt1: np.ndarray
    pack_gt1_stderr: np.ndarray
    leader_change: np.ndarray
    candidate_is_leader: np.ndarray
    chain_violations: int
    replications: int


def lead_pack_statistics(
    kind: MechanismKind | str,
    loss_matrix: LossMatrix | BeliefScenario,
    horizon: int,
    replications: int,
    seed: int,
    epsilon: float = 1.0,
) -> LeadPackStats:
    """Empirical lead-pack occupancy plus the leader-change chain check.

    Verifies at every round that the leader-change frequency does not
    exceed Pr(C_t = I_t) * Pr(|A_t| > 1) by more than three joint standard
    errors (the stabilized kinds' chained bound).
    """
    kind = MechanismKind(kind)
    if kind not in (MechanismKind.FPL_SELF, MechanismKind.FPL_SELF_EPS):
        raise ValueError("lead-pack statistics are defined for the stabilized kinds")
    if replications < 100:
        raise ValueError("need at least 100 replications")
    eps = epsilon if kind == MechanismKind.FPL_SELF_EPS else 1.0
    res = simulate_self_batch(loss_matrix, horizon, replications, seed, epsilon=eps)
    r = replications
    pg = res.pack_gt1_freq
    lc = res.leader_change_freq
    cl = res.candidate_is_leader_freq
    se_pg = np.sqrt(pg * (1 - pg) / r)
    se_lc = np.sqrt(lc * (1 - lc) / r)
    se_cl = np.sqrt(cl * (1 - cl) / r)
    bound = cl * pg
    # first-order error propagation for the product, plus the lhs error
    se_bound = np.sqrt((cl * se_pg) ** 2 + (pg * se_cl) ** 2)
    violations = int(np.sum(lc[:-1] > bound[:-1] + 3.0 * (se_lc[:-1] + se_bound[:-1])))
    return LeadPackStats(
        rounds=np.arange(1, horizon + 1),
        pack_gt1=pg,
        pack_gt1_stderr=se_pg,
        leader_change=lc,
        candidate_is_leader=cl,
        chain_violations=violations,
        replications=r,
    )


@dataclass
class NoiseBoundResult:
    empirical: float
    stderr: float
    bound: float
    valid: bool
    passed: bool


def max_noise_deviation_check(
    kind: MechanismKind | str,
    source: LossMatrix | BeliefScenario,
    horizon: int,
    replications: int,
    seed: int,
    epsilon: float = 1.0,
) -> NoiseBoundResult:
    """Check E[max_j |sum_s X_{j,s}|] against 4*lambda*sqrt(t log(2N)/q).

    lambda = 4 and q = epsilon/N (epsilon = 1 for the full-information
    kind); the check is skipped when t is below the bound's validity
    threshold t >= (3/q) log(N/sqrt(q)).
    """
    kind = MechanismKind(kind)
    if kind == MechanismKind.FPL_SELF:
        eps = 1.0
    elif kind == MechanismKind.FPL_SELF_EPS:
        eps = epsilon
    else:
        raise ValueError("noise reconstruction is defined for the stabilized kinds")
    n = source.n_experts
    params = RegretBoundParams.for_setting(n, eps)
    q, lam = params.q, params.lam
    valid = horizon >= (3.0 / q) * math.log(n / math.sqrt(q))
    bound = 4.0 * lam * math.sqrt(horizon * math.log(2 * n) / q)
    res = simulate_self_batch(
        source, horizon, replications, seed, epsilon=eps, track_noise_at=horizon
    )
    values = res.noise_running_max
    empirical = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(replications))
    return NoiseBoundResult(
        empirical=empirical,
        stderr=stderr,
        bound=bound,
        valid=bool(valid),
        passed=bool(not valid or empirical <= bound + 3.0 * stderr),
    )


@dataclass
class EquivalenceVerdict:
    equal: bool
    max_abs_difference: float | None
    p_value: float | None


def marginal_equivalence(
    kind_a: MechanismKind | str,
    kind_b: MechanismKind | str,
    loss_matrix: LossMatrix | np.ndarray,
    round_index: int,
    mode: str = "exact",
    epsilon: float = 1.0,
    replications: int = 20000,
    seed: int = 0,
    condition_a_on_exploitation: bool = False,
) -> EquivalenceVerdict:
    """Compare two kinds' selection laws at one round, exactly or by sampling.

    Exact mode compares the enumeration oracle's distributions entrywise at
    1e-10. Monte Carlo mode runs both step machines and only rejects
    equality below p = 0.001 on a two-sample chi-square test.
    """
    matrix = loss_matrix.values if isinstance(loss_matrix, LossMatrix) else np.asarray(loss_matrix, dtype=float)
    if mode == "exact":
        da = selection_distribution_exact(
            MechanismKind(kind_a), matrix, round_index, epsilon=epsilon,
            condition_on_exploitation=condition_a_on_exploitation,
        )
        db = selection_distribution_exact(
            MechanismKind(kind_b), matrix, round_index, epsilon=epsilon
        )
        diff = float(np.abs(da - db).max())
        return EquivalenceVerdict(equal=diff <= 1e-10, max_abs_difference=diff, p_value=None)
    if mode != "monte-carlo":
        raise ValueError("mode must be 'exact' or 'monte-carlo'")
    n = matrix.shape[0]
    counts = np.zeros((2, n), dtype=int)
    seeds = np.random.SeedSequence(seed).spawn(2 * replications)
    for r in range(replications):
        for row, kind in enumerate((kind_a, kind_b)):
            rng = np.random.default_rng(seeds[2 * r + row])
            mech = make_mechanism(MechanismKind(kind), n, rng, epsilon=epsilon)
            for t in range(round_index - 1):
                mech.step(matrix[:, t])
            # the selection at round_index never depends on its own losses
            sel = mech.step(np.zeros(n)).selected
            counts[row, sel] += 1
    _, p_value, _, _ = stats.chi2_contingency(counts + 1e-12)
    return EquivalenceVerdict(equal=bool(p_value > 0.001), max_abs_difference=None, p_value=float(p_value))


@dataclass
class ScalingRow:
    horizon: int
    mean_regret: float
    stderr: float


@dataclass
class ScalingResult:
    rows: list[ScalingRow]
    slope: float
    slope_stderr: float
    intercept: float

    def slope_interval(self, z: float = 2.0) -> tuple[float, float]:
        return self.slope - z * self.slope_stderr, self.slope + z * self.slope_stderr


def fit_loglog_slope(horizons: Sequence[int], means: Sequence[float],
                     min_horizon: int = 256) -> tuple[float, float, float]:
    """OLS slope of log(mean regret) on log(T), restricted to T >= min_horizon."""
    xs, ys = [], []
    for t, m in zip(horizons, means):
        if t >= min_horizon and m > 0.0:
            xs.append(math.log(t))
            ys.append(math.log(m))
    if len(xs) < 2:
        raise ValueError("need at least two usable points for the slope fit")
    fit = stats.linregress(xs, ys)
    return float(fit.slope), float(fit.stderr if fit.stderr == fit.stderr else 0.0), float(fit.intercept)


def regret_scaling_experiment(
    kind: MechanismKind | str,
    horizons: Sequence[int],
    n_experts: int,
    replications: int,
    seed: int,
    scenario: BeliefScenario | None = None,
    epsilon_rule: Callable[[int], float] | None = None,
    alternating: bool = False,
    min_fit_horizon: int = 256,
) -> ScalingResult:
    """Mean regret against the horizon with a fitted log-log slope.

    The bandit kind defaults to the epsilon = (N/T)^(1/3) schedule. With
    ``alternating`` the two-expert alternating matrix replaces the belief
    scenario (the linear-regret control case).
    """
    kind = MechanismKind(kind)
    scenario = scenario or default_scenario(n_experts)
    rows: list[ScalingRow] = []
    seeds = np.random.SeedSequence(seed).spawn(len(horizons))
    for t_idx, horizon in enumerate(horizons):
        if alternating:
            source: LossMatrix | BeliefScenario = adversary_alternating(n_experts, horizon)
        else:
            source = scenario
        if epsilon_rule is not None:
            eps = epsilon_rule(horizon)
        elif kind == MechanismKind.FPL_ELF_EPS:
            eps = (n_experts / horizon) ** (1.0 / 3.0)
        else:
            eps = 1.0
        regrets = regret_batch(
            kind, source, horizon, replications,
            seed=int(seeds[t_idx].generate_state(1)[0]), epsilon=eps,
        )
        rows.append(
            ScalingRow(
                horizon=int(horizon),
                mean_regret=float(regrets.mean()),
                stderr=float(regrets.std(ddof=1) / math.sqrt(replications)),
            )
        )
    slope, slope_se, intercept = fit_loglog_slope(
        [r.horizon for r in rows], [r.mean_regret for r in rows], min_fit_horizon
    )
    return ScalingResult(rows=rows, slope=slope, slope_stderr=slope_se, intercept=intercept)
