import math

import numpy as np
import pytest

from elflab import sim
from elflab.mechanisms import FplSelf, MechanismKind, WoeState
from elflab.sim import (
    BeliefScenario,
    LossMatrix,
    adversary_alternating,
    adversary_bernoulli_beliefs,
    belief_regret,
    default_scenario,
    fit_loglog_slope,
    lead_pack,
    lead_pack_statistics,
    marginal_equivalence,
    max_noise_deviation_check,
    regret_scaling_experiment,
    run_trajectory,
    simulate_self_batch,
)


class TestLossMatrix:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossMatrix(np.array([[0.5, 1.5]]))
        with pytest.raises(ValueError):
            LossMatrix(np.zeros(3))

    def test_shape_accessors(self):
        m = LossMatrix(np.zeros((3, 7)))
        assert m.n_experts == 3 and m.horizon == 7


class TestAdversaries:
    def test_alternating_matrix(self):
        m = adversary_alternating(2, 4)
        assert np.array_equal(m.values, [[1, 0, 1, 0], [0, 1, 0, 1]])
        assert np.allclose(m.values.sum(axis=1), 2.0)

    def test_alternating_requires_two_experts_even_horizon(self):
        with pytest.raises(ValueError):
            adversary_alternating(3, 4)
        with pytest.raises(ValueError):
            adversary_alternating(2, 5)

    def test_bernoulli_beliefs_degenerate_means(self):
        _, matrix = adversary_bernoulli_beliefs(3, 20, [0.5, 0.5, 0.5], seed=1)
        assert np.allclose(matrix.values, 0.25)
        assert matrix.provenance == "generated-from-beliefs"

    def test_perfect_expert_zero_loss(self):
        _, matrix = adversary_bernoulli_beliefs(2, 30, [None, 0.5], seed=2)
        assert np.allclose(matrix.values[0], 0.0)

    def test_seed_determinism(self):
        a = adversary_bernoulli_beliefs(2, 10, [0.3, 0.7], seed=3, width=0.1)
        b = adversary_bernoulli_beliefs(2, 10, [0.3, 0.7], seed=3, width=0.1)
        assert np.array_equal(a[1].values, b[1].values)

    def test_belief_models_factorized(self):
        models, matrix = adversary_bernoulli_beliefs(2, 5, [0.4, 0.6], seed=4)
        for m in models:
            assert m.horizon == 5
            for t in range(1, 6):
                assert 0.0 <= m.truthful_report(t) <= 1.0


class TestTrajectory:
    def test_zero_losses_zero_regret(self):
        traj = run_trajectory(MechanismKind.FPL_SELF, np.zeros((2, 10)), seed=5)
        assert traj.regret() == 0.0

    def test_fixed_seed_identical_bytes(self):
        m = np.random.default_rng(6).random((2, 12))
        a = run_trajectory(MechanismKind.FPL_ELF, m, seed=7)
        b = run_trajectory(MechanismKind.FPL_ELF, m, seed=7)
        assert a.to_json_lines() == b.to_json_lines()

    def test_belief_regret_identity(self):
        m = LossMatrix(np.random.default_rng(8).random((3, 20)))
        traj = run_trajectory(MechanismKind.FPL_SELF, m, seed=9)
        assert belief_regret(traj, m) == pytest.approx(traj.regret(), abs=1e-9)

    def test_fpl_identity_argmin_matches_perturbed_losses(self):
        # the woe argmin and the reconstructed perturbed-loss argmin agree
        n = 3
        m = np.random.default_rng(10).random((n, 40))
        rng = np.random.default_rng(11)
        mech = FplSelf(n, rng)
        noise0 = mech.state.tie_noise.copy()
        woe_hist = []
        for t in range(40):
            cum_before = mech.state.cumulative_woe.copy()
            rec = mech.step(m[:, t])
            # perturbed losses: round 0 contributes 4N * noise, each round
            # 4N * W - 2; the common -2 shift cannot move the argmin
            tilde = 4 * n * (noise0 + np.sum(woe_hist, axis=0)) - 2 * t if woe_hist else 4 * n * noise0
            assert int(np.argmin(cum_before)) == int(np.argmin(tilde))
            assert rec.selected == int(np.argmin(cum_before))
            woe_hist.append(np.array(rec.woe_draws))

    def test_dominant_expert_gets_selected(self):
        m = np.zeros((2, 300))
        m[1] = 1.0
        traj = run_trajectory(MechanismKind.FPL_SELF, m, seed=12)
        late = [r.selected for r in traj.records[200:]]
        assert np.mean(late) < 0.2
        assert traj.regret() < 40


class TestLeadPack:
    def test_members(self):
        state = WoeState(np.array([0.0, 0.1, 2.0]), np.zeros(3))
        assert lead_pack(state).members == (0, 1)

    def test_all_equal_full_set(self):
        state = WoeState(np.zeros(4), np.zeros(4))
        assert lead_pack(state).members == (0, 1, 2, 3)

    def test_strict_inequality(self):
        state = WoeState(np.array([0.0, 1.0001]), np.zeros(2))
        assert lead_pack(state).members == (0,)

    def test_statistics_round_one_full_pack(self):
        matrix = LossMatrix(np.full((3, 50), 0.5))
        stats = lead_pack_statistics(MechanismKind.FPL_SELF, matrix, 50, 200, seed=13)
        assert stats.pack_gt1[0] == 1.0
        assert stats.chain_violations == 0

    def test_requires_stabilized_kind(self):
        with pytest.raises(ValueError):
            lead_pack_statistics(MechanismKind.FPL_ELF, LossMatrix(np.zeros((2, 4))), 4, 200, 0)


class TestEquivalence:
    def test_exact_pairs_equal(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            m = rng.random((2, 3))
            for t in (1, 2, 3):
                v = marginal_equivalence("fpl_elf", "fpl_self", m, t)
                assert v.equal and v.max_abs_difference <= 1e-10
                v2 = marginal_equivalence(
                    "fpl_elf_eps", "fpl_self_eps", m, t,
                    epsilon=0.5, condition_a_on_exploitation=True,
                )
                assert v2.equal

    def test_different_mechanisms_not_equal(self):
        m = adversary_alternating(2, 4).values
        v = marginal_equivalence("fpl_elf", "online_ielf", m, 2)
        assert not v.equal

    def test_monte_carlo_mode(self):
        m = np.random.default_rng(15).random((2, 2))
        v = marginal_equivalence(
            "fpl_elf", "fpl_self", m, 3, mode="monte-carlo", replications=4000, seed=16
        )
        assert v.p_value > 0.001 and v.equal


class TestBatchEngines:
    def test_self_batch_agrees_with_step_machine(self):
        m = LossMatrix(np.random.default_rng(17).random((2, 16)))
        batch = simulate_self_batch(m, 16, 60_000, seed=18)
        trajs = [run_trajectory(MechanismKind.FPL_SELF, m, seed=r).regret() for r in range(6000)]
        se = np.std(trajs, ddof=1) / math.sqrt(len(trajs))
        se_b = batch.regrets.std(ddof=1) / math.sqrt(batch.regrets.size)
        assert abs(batch.regrets.mean() - np.mean(trajs)) <= 4 * math.hypot(se, se_b)

    def test_elf_eps_mixture_matches_faithful_machine(self):
        m = LossMatrix(np.random.default_rng(19).random((2, 12)))
        batch = simulate_self_batch(m, 12, 60_000, seed=20, epsilon=0.5, elf_eps_mixture=True)
        trajs = [
            run_trajectory(MechanismKind.FPL_ELF_EPS, m, seed=30_000 + r, epsilon=0.5).regret()
            for r in range(6000)
        ]
        se = np.std(trajs, ddof=1) / math.sqrt(len(trajs))
        se_b = batch.regrets.std(ddof=1) / math.sqrt(batch.regrets.size)
        assert abs(batch.regrets.mean() - np.mean(trajs)) <= 4 * math.hypot(se, se_b)

    def test_happy_batch_agrees_with_step_machine(self):
        m = adversary_alternating(2, 50)
        batch = sim.simulate_happy_batch(m, 50, 20_000, seed=21)
        trajs = [run_trajectory(MechanismKind.ONLINE_IELF, m, seed=r).regret() for r in range(2000)]
        se = np.std(trajs, ddof=1) / math.sqrt(len(trajs))
        se_b = batch.regrets.std(ddof=1) / math.sqrt(batch.regrets.size)
        assert abs(batch.regrets.mean() - np.mean(trajs)) <= 4 * math.hypot(se, se_b)

    def test_exploration_rate_within_three_sigma(self):
        res = simulate_self_batch(
            BeliefScenario(skills=(0.0, 0.0)), 400, 500, seed=22, epsilon=0.3
        )
        rate = res.exploration_freq.mean()
        se = math.sqrt(0.3 * 0.7 / (400 * 500))
        assert abs(rate - 0.3) <= 3 * se


class TestScaling:
    def test_online_ielf_linear_regret_small(self):
        res = regret_scaling_experiment(
            MechanismKind.ONLINE_IELF, [100, 200, 400], 2, 300, seed=23,
            alternating=True, min_fit_horizon=1,
        )
        assert res.slope == pytest.approx(1.0, abs=0.06)
        mid = res.rows[1]
        assert abs(mid.mean_regret - 50.0) <= 4 * mid.stderr

    def test_degenerate_rows_dropped(self):
        with pytest.raises(ValueError):
            fit_loglog_slope([256, 512], [0.0, 0.0])

    def test_slope_of_exact_power_law(self):
        slope, se, _ = fit_loglog_slope([256, 512, 1024, 2048], [16, 32, 64, 128], 256)
        assert slope == pytest.approx(1.0, abs=1e-12)

    def test_default_scenario_shapes(self):
        sc = default_scenario(4)
        assert sc.n_experts == 4
        col = sc.column(10, np.random.default_rng(24))
        assert col.shape == (10, 4)
        assert np.all((col >= 0) & (col <= 1))


class TestNoiseBound:
    def test_bound_formula(self):
        # 4 * lambda * sqrt(t log(2N) / q) at lambda=4, q=1/2, t=100, N=2
        res = max_noise_deviation_check(
            MechanismKind.FPL_SELF, BeliefScenario(skills=(0.0, 0.0)), 100, 200, seed=25
        )
        assert res.bound == pytest.approx(16 * math.sqrt(100 * math.log(4) / 0.5), rel=1e-12)
        assert res.valid and res.passed
        assert res.empirical < res.bound

    def test_below_validity_threshold_skipped(self):
        res = max_noise_deviation_check(
            MechanismKind.FPL_SELF_EPS, BeliefScenario(skills=(0.0,) * 4), 20, 100,
            seed=26, epsilon=0.05,
        )
        assert not res.valid and res.passed
