"""Configuration-driven experiment runner.

One TOML file fully describes an experiment; the runner writes
``data.csv`` (17-significant-digit floats, fixed column order),
``summary.json`` (config hash, per-assertion pass flags) and ``run.log``
into the output directory. Re-running the same config and seed reproduces
the CSV byte for byte regardless of the thread count.

Exit codes: 0 all assertions pass, 1 assertion failure, 2 config error,
3 infeasible exact instance.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__, incentives, pbin, sim
from .mechanisms import InstanceTooLarge, MechanismKind
from .scoring import LOSS_FUNCTIONS, ElfParams

EXPERIMENTS = (
    "regret-curve",
    "lead-pack",
    "ic-audit",
    "pbin-check",
    "counterexample",
    "equivalence",
    "noise-bound",
)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def parse_set_override(expr: str):
    if "=" not in expr:
        raise ConfigError(f"--set expects key=value, got {expr!r}")
    key, raw = expr.split("=", 1)
    try:
        value = tomllib.loads(f"x = {raw}")["x"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare string
    return key.strip(), value


def apply_override(config: dict, key: str, value) -> None:
    parts = key.split(".")
    node = config
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-table key {p!r}")
    node[parts[-1]] = value


def _scenario_from_config(params: dict, n_experts: int):
    name = params.get("adversary", "two-leaders")
    if name == "two-leaders":
        return sim.default_scenario(n_experts)
    if name == "exchangeable":
        return sim.BeliefScenario(skills=tuple([0.0] * n_experts),
                                  width=float(params.get("belief_width", 0.15)))
    if name == "alternating":
        return "alternating"
    if name == "constant":
        level = float(params.get("constant_loss", 0.25))
        horizon = int(params.get("horizon", params.get("T", 0)) or max(params.get("horizons", [0])))
        values = np.full((n_experts, horizon), level)
        return sim.LossMatrix(values=values, provenance="explicit")
    raise ConfigError(f"unknown adversary {name!r}")


def _chunk_sizes(total: int, chunks: int) -> list[int]:
    base = total // chunks
    sizes = [base] * chunks
    for i in range(total - base * chunks):
        sizes[i] += 1
    return [s for s in sizes if s > 0]


FIXED_CHUNKS = 16


def _regrets_chunked(kind, source, horizon, replications, seed, epsilon, threads):
    """Split replications into deterministic seeded chunks; merge in order.

    The chunk layout is fixed (independent of the thread count), so the
    output is byte-identical no matter how many workers run the chunks.
    """
    sizes = _chunk_sizes(replications, min(FIXED_CHUNKS, replications))
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [
        (size, int(s.generate_state(1)[0]))
        for size, s in zip(sizes, seeds)
    ]

    def run(job):
        size, s = job
        return sim.regret_batch(kind, source, horizon, size, seed=s, epsilon=epsilon)

    if len(jobs) == 1 or threads <= 1:
        parts = [run(j) for j in jobs]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    return np.concatenate(parts)


def _save_trajectories(out_dir, kind, scenario, n, horizon, count, seed, epsilon):
    """Dump step-machine trajectories as JSON lines, one record per line."""
    rng = np.random.default_rng(seed)
    with open(out_dir / "trajectories.jsonl", "w") as fh:
        for r in range(count):
            if scenario == "alternating":
                matrix = sim.adversary_alternating(n, horizon).values
            elif isinstance(scenario, sim.LossMatrix):
                matrix = scenario.values[:, :horizon]
            else:
                matrix = np.stack(
                    [scenario.column(1, rng)[0] for _ in range(horizon)], axis=1
                )
            traj = sim.run_trajectory(kind, matrix, seed=seed + 1000 + r, epsilon=epsilon)
            fh.write(traj.to_json_lines() + "\n")


def run_regret_curve(params: dict, seed: int, threads: int, log, out_dir: Path) -> tuple[list, list, dict]:
    kind = MechanismKind(params.get("mechanism", "fpl_elf"))
    n = int(params.get("n_experts", 4))
    horizons = [int(t) for t in params.get("horizons", [256, 512, 1024])]
    replications = int(params.get("replications", 400))
    scenario = _scenario_from_config(params, n)
    rows = []
    means = []
    seeds = np.random.SeedSequence(seed).spawn(len(horizons))
    for i, horizon in enumerate(horizons):
        if scenario == "alternating":
            source = sim.adversary_alternating(n, horizon)
        else:
            source = scenario
        if "epsilon" in params:
            eps = float(params["epsilon"])
        elif kind == MechanismKind.FPL_ELF_EPS:
            eps = (n / horizon) ** (1.0 / 3.0)
        else:
            eps = 1.0
        regrets = _regrets_chunked(
            kind, source, horizon, replications,
            int(seeds[i].generate_state(1)[0]), eps, threads,
        )
        means.append(regrets.mean())
        log.info("T=%d mean regret %.3f (stderr %.3f)", horizon,
                 regrets.mean(), regrets.std(ddof=1) / math.sqrt(replications))
        for r, value in enumerate(regrets):
            rows.append([horizon, r, value])
    if params.get("save_trajectories", 0):
        _save_trajectories(
            out_dir, kind, scenario, n, min(horizons),
            int(params["save_trajectories"]), seed,
            float(params.get("epsilon", 1.0)),
        )
    min_fit = int(params.get("min_fit_horizon", 256))
    usable = sum(1 for t, m in zip(horizons, means) if t >= min_fit and m > 0)
    if usable >= 2:
        slope, slope_se, intercept = sim.fit_loglog_slope(horizons, means, min_fit)
    else:
        slope = slope_se = intercept = None
    summary = {
        "mechanism": kind.value,
        "horizons": horizons,
        "mean_regret": [float(m) for m in means],
        "slope": slope,
        "slope_stderr": slope_se,
        "intercept": intercept,
    }
    flags = {}
    if "expected_slope_range" in params:
        lo, hi = params["expected_slope_range"]
        flags["slope_in_range"] = bool(lo <= slope <= hi)
    if "max_final_regret_fraction" in params:
        frac = float(params["max_final_regret_fraction"])
        flags["final_regret_sublinear"] = bool(means[-1] < horizons[-1] * frac)
    summary["checks"] = flags
    header = ["horizon", "replication", "regret"]
    return header, rows, summary


def run_lead_pack(params: dict, seed: int, threads: int, log, out_dir: Path) -> tuple[list, list, dict]:
    kind = MechanismKind(params.get("mechanism", "fpl_self"))
    n = int(params.get("n_experts", 4))
    horizon = int(params.get("horizon", 2048))
    replications = int(params.get("replications", 400))
    level = float(params.get("constant_loss", 0.25))
    matrix = sim.LossMatrix(np.full((n, horizon), level))
    stats = sim.lead_pack_statistics(
        kind, matrix, horizon, replications, seed,
        epsilon=float(params.get("epsilon", 1.0)),
    )
    checkpoints = [int(t) for t in params.get(
        "checkpoints", [t for t in (512, 724, 1024, 1448, 2048, 2896, 4096) if t <= horizon]
    )]
    rows = [
        [int(t), stats.pack_gt1[t - 1], stats.pack_gt1_stderr[t - 1],
         stats.leader_change[t - 1], stats.candidate_is_leader[t - 1]]
        for t in checkpoints
    ]
    y = np.array([stats.pack_gt1[t - 1] for t in checkpoints], dtype=float)
    g = np.array([math.log(t) / math.sqrt(t) for t in checkpoints])
    coef = float((g @ y) / (g @ g))
    resid = y - coef * g
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 0.0
    se = np.array([stats.pack_gt1_stderr[t - 1] for t in checkpoints])
    decreasing = bool(
        all(y[i + 1] <= y[i] + 3.0 * math.hypot(se[i], se[i + 1]) for i in range(len(y) - 1))
    )
    log.info("lead-pack fit: coef=%.4f R2=%.3f decreasing=%s chain_violations=%d",
             coef, r2, decreasing, stats.chain_violations)
    summary = {
        "fit_coefficient": coef,
        "r_squared": r2,
        "checks": {
            "r_squared_above_0.8": bool(r2 > 0.8),
            "decreasing_within_3sigma": decreasing,
            "leader_change_chain_respected": bool(stats.chain_violations == 0),
        },
    }
    header = ["round", "pack_gt1", "pack_gt1_stderr", "leader_change", "candidate_is_leader"]
    return header, rows, summary


def _general_elf_triples(rng: np.random.Generator, count: int) -> list[ElfParams]:
    out = []
    while len(out) < count:
        a1 = rng.uniform(0.2, 0.9)
        a2 = rng.uniform(0.1, min(1.0, a1 + 0.5))
        lo = 1.0 - (1.0 - a1) / a2
        hi = a1 / a2
        # stay strictly below the hi boundary so no win probability can hit zero
        rho = rng.uniform(max(lo, -1.0), hi - 0.05) if hi - 0.05 > max(lo, -1.0) else None
        if rho is None:
            continue
        out.append(ElfParams(a1=a1, a2=a2, rho=float(rho)))
    return out


def run_ic_audit(params: dict, seed: int, threads: int, log, out_dir: Path) -> tuple[list, list, dict]:
    n = int(params.get("n_experts", 2))
    horizon = int(params.get("horizon", 2))
    n_beliefs = int(params.get("beliefs", 20))
    epsilon = float(params.get("epsilon", 0.5))
    kinds = params.get(
        "mechanisms", ["fpl_elf", "fpl_elf_eps", "decoupled", "general_elf"]
    )
    rng = np.random.default_rng(seed)
    suite = [incentives.random_belief(rng, 0, n, horizon) for _ in range(n_beliefs)]
    rows = []
    audit_dump = []
    all_passed = True
    for kind in kinds:
        if kind == "general_elf":
            triples = _general_elf_triples(rng, int(params.get("general_elf_triples", 5)))
            for p_idx, p in enumerate(triples):
                reports = incentives.ic_audit(
                    "general_elf", suite, params=p, seed=seed + p_idx
                )
                for rep in reports:
                    rows.append([f"general_elf[{p_idx}]", rep.belief_id, rep.decision_round,
                                 rep.target_round, rep.history_id, rep.truthful_report,
                                 rep.prob_truthful, rep.best_grid_report, rep.margin,
                                 rep.passed])
                    audit_dump.append({"mechanism": f"general_elf[{p_idx}]", **rep.to_dict()})
                    all_passed &= rep.passed
                log.info("general_elf triple %d (a1=%.3f a2=%.3f rho=%.3f): %d audits",
                         p_idx, p.a1, p.a2, p.rho, len(reports))
        else:
            reports = incentives.ic_audit(
                MechanismKind(kind), suite, epsilon=epsilon, seed=seed
            )
            for rep in reports:
                rows.append([kind, rep.belief_id, rep.decision_round, rep.target_round,
                             rep.history_id, rep.truthful_report, rep.prob_truthful,
                             rep.best_grid_report, rep.margin, rep.passed])
                audit_dump.append(rep.to_dict())
                all_passed &= rep.passed
            log.info("%s: %d audits, %d failed", kind, len(reports),
                     sum(not r.passed for r in reports))
    with open(out_dir / "audits.json", "w") as fh:
        json.dump(audit_dump, fh, indent=1)
        fh.write("\n")
    header = ["mechanism", "belief", "decision_round", "target_round", "history",
              "truthful_report", "prob_truthful", "best_grid_report", "margin", "passed"]
    summary = {"audits": len(rows), "checks": {"all_truthful": bool(all_passed)}}
    return header, rows, summary


def run_pbin_check(params: dict, seed: int, threads: int, log, out_dir: Path) -> tuple[list, list, dict]:
    rng = np.random.default_rng(seed)
    n_instances = int(params.get("instances", 200))
    t_max = int(params.get("t_max", 12))
    rows = []
    checks = {}

    # exact pmf vs brute-force enumeration
    max_err = 0.0
    for i in range(n_instances):
        t = int(rng.integers(1, t_max + 1))
        theta = rng.random(t)
        pmf = pbin.pbin_pmf(theta)
        masks = (np.arange(1 << t)[:, None] >> np.arange(t)) & 1
        weights = np.prod(np.where(masks == 1, theta, 1.0 - theta), axis=1)
        brute = np.bincount(masks.sum(axis=1), weights=weights, minlength=t + 1)
        max_err = max(max_err, float(np.abs(pmf - brute).max()))
    rows.append(["pmf_vs_enumeration", n_instances, 0, max_err])
    checks["pmf_exact_to_1e-12"] = bool(max_err < 1e-12)
    log.info("pmf vs enumeration: max err %.2e over %d instances", max_err, n_instances)

    # mode and ratio structure
    violations = 0
    for i in range(int(params.get("structure_instances", 500))):
        t = int(rng.integers(2, 101))
        theta = rng.uniform(0.02, 0.98, t)
        dist = pbin.PBin.from_params(theta)
        m_l, m_r = pbin.modes(dist)
        mean = t * dist.mean
        if not (abs(m_l - mean) <= 1.0 or abs(m_r - mean) <= 1.0):
            violations += 1
        ratios = [pbin.ratio(dist, k) for k in range(t + 1)]
        if not all(ratios[k] < ratios[k + 1] for k in range(t)):
            violations += 1
    rows.append(["mode_ratio_structure", int(params.get("structure_instances", 500)), violations, 0.0])
    checks["mode_ratio_structure"] = bool(violations == 0)

    summary = {"checks": checks}
    header = ["check", "instances", "violations", "max_error"]
    return header, rows, summary


def run_counterexample(params: dict, seed: int, threads: int, log, out_dir: Path) -> tuple[list, list, dict]:
    loss = LOSS_FUNCTIONS[params.get("loss", "brier")]
    res = incentives.multiple_draws_counterexample(loss)
    d = res.to_dict()
    log.info("counterexample: r*=%.6f gap=%.3e closed-form err=%.2e",
             res.r_star, res.gap, res.max_closed_form_error)
    header = list(d.keys())
    rows = [[d[k] for k in header]]
    checks = {
        "gap_positive": bool(res.gap > 0.0),
        "closed_form_matches_1e-12": bool(res.max_closed_form_error <= 1e-12),
        "deviation_above_0.05": bool(abs(res.r_star - res.truthful_report) > 0.05),
    }
    summary = {"result": d, "checks": checks}
    return header, rows, summary


def run_equivalence(params: dict, seed: int, threads: int, log, out_dir: Path) -> tuple[list, list, dict]:
    n = int(params.get("n_experts", 2))
    n_matrices = int(params.get("matrices", 50))
    rounds = [int(t) for t in params.get("rounds", [1, 2, 3])]
    epsilon = float(params.get("epsilon", 0.5))
    rng = np.random.default_rng(seed)
    rows = []
    ok = True
    for m_idx in range(n_matrices):
        matrix = rng.random((n, max(rounds)))
        for t in rounds:
            v1 = sim.marginal_equivalence("fpl_elf", "fpl_self", matrix, t, mode="exact")
            v2 = sim.marginal_equivalence(
                "fpl_elf_eps", "fpl_self_eps", matrix, t, mode="exact",
                epsilon=epsilon, condition_a_on_exploitation=True,
            )
            rows.append([m_idx, t, "fpl_elf_vs_fpl_self", v1.max_abs_difference, v1.equal])
            rows.append([m_idx, t, "fpl_elf_eps_vs_fpl_self_eps", v2.max_abs_difference, v2.equal])
            ok &= v1.equal and v2.equal
    header = ["matrix", "round", "pair", "max_abs_difference", "equal"]
    summary = {"checks": {"all_equal_to_1e-10": bool(ok)}}
    log.info("equivalence: %d comparisons, all equal: %s", len(rows), ok)
    return header, rows, summary


def run_noise_bound(params: dict, seed: int, threads: int, log, out_dir: Path) -> tuple[list, list, dict]:
    n = int(params.get("n_experts", 4))
    horizon = int(params.get("horizon", 2048))
    replications = int(params.get("replications", 400))
    epsilon = float(params.get("epsilon", 0.25))
    scenario = _scenario_from_config(params, n)
    rows = []
    ok = True
    for kind, eps in (("fpl_self", 1.0), ("fpl_self_eps", epsilon)):
        res = sim.max_noise_deviation_check(
            kind, scenario, horizon, replications, seed, epsilon=eps
        )
        rows.append([kind, eps, res.empirical, res.stderr, res.bound, res.valid, res.passed])
        ok &= res.passed
        log.info("%s eps=%.3f: empirical %.2f <= bound %.2f (valid=%s)",
                 kind, eps, res.empirical, res.bound, res.valid)
    header = ["mechanism", "epsilon", "empirical_max_abs", "stderr", "bound", "valid", "passed"]
    summary = {"checks": {"noise_bound_respected": bool(ok)}}
    return header, rows, summary


RUNNERS = {
    "regret-curve": run_regret_curve,
    "lead-pack": run_lead_pack,
    "ic-audit": run_ic_audit,
    "pbin-check": run_pbin_check,
    "counterexample": run_counterexample,
    "equivalence": run_equivalence,
    "noise-bound": run_noise_bound,
}


def run(config: dict, out_dir: Path, threads: int) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    log = logging.getLogger("elflab")
    log.setLevel(logging.INFO)
    log.handlers.clear()
    handler = logging.FileHandler(out_dir / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.addHandler(logging.StreamHandler(sys.stderr))

    experiment = config.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    if "seed" not in config:
        raise ConfigError("config must set a seed")
    seed = int(config["seed"])
    params = config.get("params", {})

    log.info("experiment=%s seed=%d threads=%d", experiment, seed, threads)
    header, rows, summary = RUNNERS[experiment](params, seed, threads, log, out_dir)
    write_csv(out_dir / "data.csv", header, rows)

    checks = summary.get("checks", {})
    passed = all(checks.values()) if checks else True
    summary_full = {
        "experiment": experiment,
        "config": config,
        "config_hash": config_hash(config),
        "artifact_version": __version__,
        "passed": bool(passed),
        **summary,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary_full, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    log.info("passed=%s", passed)
    return EXIT_OK if passed else EXIT_ASSERTION


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="elflab", description=__doc__)
    parser.add_argument("config_path", nargs="?", help="TOML experiment config")
    parser.add_argument("--config", dest="config_flag", help="TOML experiment config")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="K=V", help="override a config key (repeatable)")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)

    try:
        path = args.config_path or args.config_flag
        if path is None:
            raise ConfigError("a config file is required (positional or --config)")
        with open(path, "rb") as fh:
            config = tomllib.load(fh)
        for expr in args.overrides:
            key, value = parse_set_override(expr)
            apply_override(config, key, value)
        if args.seed is not None:
            config["seed"] = args.seed
    except (OSError, tomllib.TOMLDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return run(config, Path(args.out), args.threads)
    except InstanceTooLarge as exc:
        print(f"infeasible exact instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
