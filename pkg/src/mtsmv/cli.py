"""Command-line entry point: ``mtsmv {solve,compare,sweep,simulate,verify}``.

Exit codes: 0 success, 1 I/O or configuration problem, 2 infeasible targets,
3 a ``verify`` check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import report as rp
from .checks import invariant_suite
from .config import OUTPUT_ENV, ExperimentConfig, bundled_config, load_config
from .errors import ConfigError, DomainError, InfeasibleTargetsError
from .parameter_solver import solve_multipliers
from .simulator import QUANTILE_LEVELS, mdd_sweep, moving_average, simulate, simulate_many
from .strategy import (
    LinearFeedbackPolicy,
    classical_baseline,
    classical_policy,
    compare_models,
    propagate_moments,
)

EXIT_OK, EXIT_IO, EXIT_INFEASIBLE, EXIT_CHECK = 0, 1, 2, 3


class _Ctx:
    def __init__(self, args, cfg: ExperimentConfig):
        self.args = args
        self.cfg = cfg
        self.timestamp = not args.no_timestamp
        formats = args.format.split(",") if args.format else list(cfg.outputs.formats)
        self.formats = {f.strip() for f in formats if f.strip()}
        out = args.out or cfg.outputs.directory or os.environ.get(OUTPUT_ENV) or "out"
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.written = []

    @property
    def spec(self):
        return self.cfg.problem

    @property
    def sim(self):
        return self.cfg.simulation

    def csv(self, name, header, rows):
        if "csv" in self.formats:
            self.written.append(rp.write_csv(self.out / name, header, rows, self.timestamp))

    def json(self, name, payload):
        if "json" in self.formats:
            self.written.append(rp.write_json(self.out / name, payload, self.timestamp))

    def svg(self, name, *args, **kwargs):
        if "svg" in self.formats:
            self.written.append(rp.write_svg(self.out / name, *args, **kwargs))


def _infeasible(exc: InfeasibleTargetsError) -> int:
    print(f"infeasible: {exc}", file=sys.stderr)
    payload = {"index": exc.index, "inequality": exc.inequality}
    if exc.report is not None and hasattr(exc.report, "to_dict"):
        payload["report"] = exc.report.to_dict()
    print(json.dumps(payload, indent=2), file=sys.stderr)
    return EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# commands


def cmd_solve(ctx: _Ctx) -> int:
    spec = ctx.spec
    mult, chain, feas = solve_multipliers(spec)
    rep = propagate_moments(chain, mult, spec, ctx.args.grid_step)
    ctx.json(
        "multipliers.json",
        {
            "multipliers": mult.to_dict(),
            "feasibility": feas.to_dict(),
            "chain": chain.to_dict(),
            "checkpoint_means": list(rep.checkpoint_means),
            "checkpoint_variances": list(rep.checkpoint_variances),
        },
    )
    policy = LinearFeedbackPolicy.from_chain(chain)
    n = spec.market.n_assets
    rows = []
    for t, m, v in zip(rep.times, rep.mean, rep.variance):
        i = spec.segment_of(t)
        rows.append([t, i, float(policy.target(t, i)), *policy.direction(t, i), m, v])
    header = ["t", "segment", "target_level"] + [f"direction_{j + 1}" for j in range(n)] + ["mean", "variance"]
    ctx.csv("policy.csv", header, rows)
    print("mu     =", " ".join(f"{x:.12g}" for x in mult.mu))
    print("lambda =", " ".join(f"{x:.12g}" for x in mult.lam))
    return EXIT_OK


def cmd_compare(ctx: _Ctx) -> int:
    spec = ctx.spec
    if spec.n_checkpoints != 2:
        raise DomainError("compare needs exactly two checkpoints")
    cmp = compare_models(spec)
    mult, chain, _ = solve_multipliers(spec)
    star = propagate_moments(chain, mult, spec, ctx.args.grid_step)
    base = classical_baseline(spec, ctx.args.grid_step)
    ctx.csv(
        "figure1.csv",
        ["t", "mean_star", "mean_classical", "variance_star", "variance_classical"],
        zip(star.times, star.mean, base.mean, star.variance, base.variance),
    )
    ctx.svg(
        "figure1.svg",
        star.times,
        {"E[Y*(t)] checkpoint targets": star.mean, "E[Y#(t)] terminal target": base.mean},
        title="Mean wealth",
        xlabel="t",
        ylabel="mean",
    )
    if ctx.cfg.outputs.figures.get("figure2", True):
        pols = [LinearFeedbackPolicy.from_chain(chain, name="star"), classical_policy(spec)]
        reps = simulate_many(pols, spec, ctx.sim)
        fans = [r.quantile_fan for r in reps]
        times = reps[0].record_times
        levels = [f"{int(q * 100):02d}" for q in QUANTILE_LEVELS]
        header = ["t"] + [f"star_q{q}" for q in levels] + [f"classical_q{q}" for q in levels]
        ctx.csv("figure2.csv", header, (np.concatenate([[t], a, b]) for t, a, b in zip(times, *fans)))
        ctx.svg(
            "figure2.svg",
            times,
            {"Y* median": fans[0][:, 2], "Y# median": fans[1][:, 2]},
            bands={"Y* 5-95%": (fans[0][:, 0], fans[0][:, 4]), "Y# 5-95%": (fans[1][:, 0], fans[1][:, 4])},
            title="Wealth quantiles",
            xlabel="t",
            ylabel="wealth",
        )
    payload = cmp.to_dict()
    payload["mean_gap_min_interior"] = float(np.min((base.mean - star.mean)[1:-1]))
    ctx.json("corollary.json", payload)
    print(json.dumps({k: payload[k] for k in ("in_window", "var_star_1_lt_classical", "var_star_2_gt_classical", "sum_dominance")}))
    return EXIT_OK


def cmd_sweep(ctx: _Ctx) -> int:
    a = ctx.args
    if not (a.theta_step > 0 and a.theta_max >= a.theta_min):
        raise DomainError("need theta_min <= theta_max and theta_step > 0")
    n = int(np.floor((a.theta_max - a.theta_min) / a.theta_step + 1e-9)) + 1
    grid = np.round(a.theta_min + a.theta_step * np.arange(n), 12)
    table = mdd_sweep(ctx.spec, grid, ctx.sim)
    if not table.feasible_rows:
        print("infeasible: no theta in the range gives feasible targets", file=sys.stderr)
        return EXIT_INFEASIBLE
    h = len(table.horizons)
    header = ["theta", "L1", "feasible"]
    for j in range(h):
        header += [f"mdd_t{j + 1}", f"mdd_t{j + 1}_se"]
    rows = []
    for r in table.rows:
        row = [r.theta, r.l1, r.feasible]
        for j in range(h):
            row += [r.mdd_mean[j], r.mdd_se[j]] if r.feasible else ["", ""]
        rows.append(row)
    ctx.csv("figure3.csv", header, rows)
    theta = table.column(0)[0]
    series = {f"E[MD^t{j + 1}]": table.column(j)[1] for j in range(h)}
    ctx.svg("figure3.svg", theta, series, title="Average maximum drawdown", xlabel="theta", ylabel="E[MD]")
    if len(theta) >= 5:
        _, m2, _ = table.column(h - 1)
        smooth = moving_average(m2)
        print(f"smoothed minimum of E[MD^t{h}] at theta = {theta[2:-2][int(np.argmin(smooth))]:.6g}")
    return EXIT_OK


def cmd_simulate(ctx: _Ctx) -> int:
    spec = ctx.spec
    mult, chain, _ = solve_multipliers(spec)
    analytic = propagate_moments(chain, mult, spec)
    rep = simulate(LinearFeedbackPolicy.from_chain(chain), spec, ctx.sim)
    payload = rep.to_dict()
    payload["analytic_means"] = list(analytic.checkpoint_means)
    payload["analytic_variances"] = list(analytic.checkpoint_variances)
    ctx.json("simulation.json", payload)
    rows = zip(
        spec.checkpoints[1:],
        spec.targets,
        rep.checkpoint_mean,
        rep.checkpoint_mean_se,
        analytic.checkpoint_variances,
        rep.checkpoint_variance,
        rep.checkpoint_variance_se,
        rep.mdd_mean,
        rep.mdd_se,
    )
    ctx.csv(
        "simulation.csv",
        ["t", "target", "mean", "mean_se", "variance_analytic", "variance", "variance_se", "mdd", "mdd_se"],
        rows,
    )
    if ctx.args.samples and "csv" in ctx.formats:
        rp.write_path_samples(ctx.out / "paths.csv", rep, ctx.args.max_rows, ctx.timestamp)
        ctx.written.append(ctx.out / "paths.csv")
    if rep.n_flagged:
        print(f"warning: {rep.n_flagged} non-finite paths excluded", file=sys.stderr)
    for t, m, s in zip(spec.checkpoints[1:], rep.checkpoint_mean, rep.checkpoint_mean_se):
        print(f"t={t:g}: mean {m:.6f} +- {s:.2g}")
    return EXIT_OK


def cmd_verify(ctx: _Ctx) -> int:
    results = invariant_suite(ctx.spec, n_random=ctx.args.random)
    for r in results:
        print(r.line())
    ctx.csv("verify.csv", ["check", "ok", "value", "tolerance"], [[r.name, r.ok, r.value, r.tolerance] for r in results])
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK


COMMANDS = {
    "solve": cmd_solve,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="experiment JSON (default: bundled two-checkpoint example)")
    common.add_argument("--seed", type=int, help="override simulation.seed")
    common.add_argument("--paths", type=int, help="override simulation.n_paths")
    common.add_argument("--step", type=float, help="override simulation.step")
    common.add_argument("--out", help=f"output directory (default: config, then ${OUTPUT_ENV}, then ./out)")
    common.add_argument("--format", help="comma list of csv,json,svg")
    common.add_argument("--no-timestamp", action="store_true", help="omit the generated-at line")
    common.add_argument("--grid-step", type=float, default=0.01, help="time grid for analytic paths")

    p = argparse.ArgumentParser(prog="mtsmv", description="Mean-variance investment with intermediate targets.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="multipliers and policy table")
    sub.add_parser("compare", parents=[common], help="two-checkpoint vs terminal-only comparison")
    sw = sub.add_parser("sweep", parents=[common], help="average drawdown over the first target")
    sw.add_argument("theta_min", type=float)
    sw.add_argument("theta_max", type=float)
    sw.add_argument("theta_step", type=float)
    sm = sub.add_parser("simulate", parents=[common], help="Monte Carlo under the optimal policy")
    sm.add_argument("--samples", action="store_true", help="also write paths.csv")
    sm.add_argument("--max-rows", type=int, default=1_000_000)
    vf = sub.add_parser("verify", parents=[common], help="run the invariant checks")
    vf.add_argument("--random", type=int, default=200, help="random instances for round-trip checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else bundled_config()
        cfg = cfg.with_overrides(seed=args.seed, paths=args.paths, step=args.step)
        ctx = _Ctx(args, cfg)
        code = COMMANDS[args.command](ctx)
    except InfeasibleTargetsError as exc:
        return _infeasible(exc)
    except (OSError, ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in ctx.written:
        print(f"wrote {path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
