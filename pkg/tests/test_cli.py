import json
from pathlib import Path

import pytest

from elflab import cli


def write_config(path: Path, text: str) -> Path:
    cfg = path / "config.toml"
    cfg.write_text(text)
    return cfg


def run_cli(args):
    return cli.main([str(a) for a in args])


class TestConfigHandling:
    def test_missing_config_is_config_error(self):
        assert run_cli(["--out", "/tmp/elflab-none"]) == cli.EXIT_CONFIG

    def test_unknown_experiment(self, tmp_path):
        cfg = write_config(tmp_path, 'experiment = "nope"\nseed = 1\n')
        assert run_cli([cfg, "--out", tmp_path / "out"]) == cli.EXIT_CONFIG

    def test_missing_seed(self, tmp_path):
        cfg = write_config(tmp_path, 'experiment = "counterexample"\n')
        assert run_cli([cfg, "--out", tmp_path / "out"]) == cli.EXIT_CONFIG

    def test_set_override_parsing(self):
        assert cli.parse_set_override("params.replications=10") == ("params.replications", 10)
        assert cli.parse_set_override('params.loss="brier"') == ("params.loss", "brier")
        assert cli.parse_set_override("params.horizons=[4, 8]") == ("params.horizons", [4, 8])
        with pytest.raises(cli.ConfigError):
            cli.parse_set_override("no-equals-sign")

    def test_infeasible_instance_exit_code(self, tmp_path):
        cfg = write_config(
            tmp_path,
            'experiment = "equivalence"\nseed = 1\n[params]\nmatrices = 1\nrounds = [9]\n',
        )
        assert run_cli([cfg, "--out", tmp_path / "out"]) == cli.EXIT_INFEASIBLE

    def test_invalid_parameter_combination_is_config_error(self, tmp_path):
        # the alternating adversary is two-expert only
        cfg = write_config(
            tmp_path,
            'experiment = "regret-curve"\nseed = 2\n[params]\n'
            'adversary = "alternating"\nn_experts = 4\nhorizons = [16]\nreplications = 5\n',
        )
        assert run_cli([cfg, "--out", tmp_path / "out"]) == cli.EXIT_CONFIG


class TestRuns:
    def test_counterexample_outputs(self, tmp_path):
        cfg = write_config(tmp_path, 'experiment = "counterexample"\nseed = 3\n')
        out = tmp_path / "out"
        # the deviation-magnitude check fails by design: the exact best
        # response sits 0.0052 from truthful, below the 0.05 threshold
        assert run_cli([cfg, "--out", out]) == cli.EXIT_ASSERTION
        summary = json.loads((out / "summary.json").read_text())
        assert summary["checks"]["gap_positive"] is True
        assert summary["checks"]["closed_form_matches_1e-12"] is True
        assert summary["checks"]["deviation_above_0.05"] is False
        assert summary["config_hash"]
        assert summary["artifact_version"]
        assert (out / "data.csv").exists() and (out / "run.log").exists()

    def test_equivalence_passes(self, tmp_path):
        cfg = write_config(
            tmp_path,
            'experiment = "equivalence"\nseed = 4\n[params]\nmatrices = 3\nrounds = [1, 2, 3]\n',
        )
        out = tmp_path / "out"
        assert run_cli([cfg, "--out", out]) == cli.EXIT_OK
        header = (out / "data.csv").read_text().splitlines()[0]
        assert header == "matrix,round,pair,max_abs_difference,equal"

    def test_pbin_check_passes(self, tmp_path):
        cfg = write_config(
            tmp_path,
            'experiment = "pbin-check"\nseed = 5\n[params]\ninstances = 20\nstructure_instances = 20\n',
        )
        assert run_cli([cfg, "--out", tmp_path / "out"]) == cli.EXIT_OK

    def test_linear_regret_control_via_cli(self, tmp_path):
        cfg = write_config(
            tmp_path,
            'experiment = "regret-curve"\nseed = 10\n'
            '[params]\nmechanism = "online_ielf"\nn_experts = 2\n'
            'adversary = "alternating"\nhorizons = [200, 400, 800]\n'
            "replications = 120\nmin_fit_horizon = 1\n"
            "expected_slope_range = [0.9, 1.1]\n",
        )
        out = tmp_path / "out"
        assert run_cli([cfg, "--out", out]) == cli.EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert abs(summary["slope"] - 1.0) < 0.1

    def test_regret_curve_summary(self, tmp_path):
        cfg = write_config(
            tmp_path,
            'experiment = "regret-curve"\nseed = 6\n'
            '[params]\nmechanism = "fpl_self"\nn_experts = 2\n'
            "horizons = [64, 128]\nreplications = 50\nmin_fit_horizon = 1\n"
            'adversary = "exchangeable"\n',
        )
        out = tmp_path / "out"
        assert run_cli([cfg, "--out", out]) == cli.EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert "slope" in summary and len(summary["mean_regret"]) == 2
        lines = (out / "data.csv").read_text().splitlines()
        assert lines[0] == "horizon,replication,regret"
        assert len(lines) == 1 + 2 * 50


class TestDeterminism:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(
            tmp_path,
            'experiment = "regret-curve"\nseed = 7\n'
            '[params]\nmechanism = "fpl_elf_eps"\nn_experts = 2\nepsilon = 0.5\n'
            "horizons = [32, 64]\nreplications = 40\nmin_fit_horizon = 1\n",
        )
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli([cfg, "--out", out]) == cli.EXIT_OK
            outputs.append((out / "data.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        cfg = write_config(
            tmp_path,
            'experiment = "regret-curve"\nseed = 8\n'
            '[params]\nmechanism = "fpl_self"\nn_experts = 2\n'
            "horizons = [32]\nreplications = 37\nmin_fit_horizon = 1\n",
        )
        outputs = []
        for name, threads in (("t1", 1), ("t4", 4)):
            out = tmp_path / name
            assert run_cli([cfg, "--out", out, "--threads", threads]) == cli.EXIT_OK
            outputs.append((out / "data.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write_config(
            tmp_path,
            'experiment = "regret-curve"\nseed = 9\n'
            '[params]\nmechanism = "fpl_self"\nn_experts = 2\n'
            "horizons = [32]\nreplications = 20\nmin_fit_horizon = 1\n",
        )
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli([cfg, "--out", out_a]) == cli.EXIT_OK
        assert run_cli([cfg, "--out", out_b, "--seed", 10]) == cli.EXIT_OK
        assert (out_a / "data.csv").read_bytes() != (out_b / "data.csv").read_bytes()
