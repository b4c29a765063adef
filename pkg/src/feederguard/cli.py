"""Command-line entry point: ``feederguard <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .attacks import ADDITIVE, MULTIPLICATIVE, AttackSpec, DynamicAttackSpec, run_step_attack, run_time_series, write_time_series_csv
from .dgopt import ObjectiveWeights, PsoConfig, optimization_report, pso_optimize
from .errors import FeederError
from .netmodel import DgPlacement, apply_dg, resolve_case
from .powerflow import VoltageBand, check_limits, rank_vm, select_critical, solve, total_losses, write_solution_csv
from .scenario import run_scenario


def _bus_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated bus ids, got {text!r}") from None


def _dg_list(text: str) -> DgPlacement:
    try:
        pairs = [item.split(":") for item in text.replace(" ", "").split(",") if item]
        return DgPlacement.from_pairs((int(b), float(p)) for b, p in pairs)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected BUS:KW[,BUS:KW...], got {text!r}") from None


def _load(args):
    case = resolve_case(args.case)
    if args.slack_v is not None:
        case = case.with_slack_voltage(args.slack_v)
    if args.dg is not None:
        case = apply_dg(case, args.dg)
    return case


def _band(args) -> VoltageBand:
    return VoltageBand(args.v_min, args.v_max)


def cmd_loadflow(args) -> int:
    case = _load(args)
    sol = solve(case)
    sol.require_converged()
    p, q = total_losses(sol)
    lim = check_limits(sol, _band(args))
    print(f"case {case.name}: {len(case.buses)} buses, slack {case.slack_voltage} p.u., {len(case.dg_units)} DG")
    print(f"converged in {sol.iterations} iterations (max mismatch {sol.max_mismatch:.2e} p.u.)")
    print(f"losses: {p:.2f} kW, {q:.2f} kVAr")
    print(f"voltage: min {lim.v_min:.4f} p.u. (bus {lim.min_bus}), max {lim.v_max:.4f} p.u. (bus {lim.max_bus})")
    print(f"band violations: {[b for b, _ in lim.violations] or 'none'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_solution_csv(sol, out / "buses.csv", out / "branches.csv")
    return 0


def cmd_rank(args) -> int:
    sol = solve(_load(args))
    ranking = rank_vm(sol)
    critical = select_critical(ranking, args.k)
    for e in ranking.entries[: args.k]:
        print(f"{e.rank:3d}  bus {e.bus:4d}  {e.vm:.4f} p.u.")
    print("critical:", ",".join(map(str, critical)))
    return 0


def cmd_attack_step(args) -> int:
    case = _load(args)
    res = run_step_attack(case, AttackSpec(args.targets, args.delta))
    (p, q), (p0, q0) = res.losses, res.baseline_losses
    bus, vmin = res.attacked.min_voltage()
    lim = check_limits(res.attacked, _band(args))
    print(f"targets {sorted(res.spec.targets)}, load +{args.delta * 100:g}%")
    print(f"losses: {p:.2f} kW ({100 * (p - p0) / p0:+.2f}%), {q:.2f} kVAr ({100 * (q - q0) / q0:+.2f}%)")
    print(f"lowest voltage {vmin:.4f} p.u. at bus {bus}; breach: {lim.breach}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_solution_csv(res.attacked, out / "buses.csv", out / "branches.csv")
    return 0


def cmd_attack_dynamic(args) -> int:
    case = _load(args)
    spec = DynamicAttackSpec(
        targets=args.targets,
        peak_delta=args.peak,
        oscillation_ratio=args.osc,
        oscillation_frequency=args.freq,
        ramp_duration=args.ramp,
        horizon=args.horizon,
        time_step=args.dt,
        mode=args.mode,
    )
    ts = run_time_series(case, spec, _band(args))
    worst = ts.min_sample
    print(f"{len(ts.samples)} samples over {spec.horizon:g} s")
    print(f"minimum voltage {worst.min_voltage:.4f} p.u. at bus {worst.min_bus}, t = {worst.t:g} s")
    print(f"first breach: {'none' if ts.first_breach is None else f'{ts.first_breach:g} s'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_time_series_csv(ts, out / "dynamic_summary.csv", out / "dynamic_voltages.csv")
    return 0


def cmd_optimize_dg(args) -> int:
    case = _load(args)
    config = PsoConfig(swarm_size=args.swarm, iterations=args.iters, seed=args.seed, n_dg=args.n_dg)
    weights = ObjectiveWeights(v_ref=args.v_ref, alpha=args.alpha, beta=args.beta, band=_band(args))
    result = pso_optimize(case, weights, config)
    report = optimization_report(case, result)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    pf = report["power_flow"]
    for u in result.best_placement.units:
        print(f"DG at bus {u.bus:3d}: {u.p_dg:8.1f} kW")
    print(f"objective {result.best_objective:.6g} after {result.evaluations} evaluations")
    print(f"losses {pf['p_loss_kw']:.2f} kW / {pf['q_loss_kvar']:.2f} kVAr, min voltage {pf['min_voltage_pu']:.4f} p.u.")
    return 0


def cmd_run(args) -> int:
    bundle = run_scenario(args.scenario, args.out, overwrite=args.overwrite)
    print(f"bundle written to {bundle.path} ({len(bundle.manifest['artifacts'])} artifacts)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feederguard", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def case_cmd(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("case", help="bundled case name (e.g. ieee33) or path to a case JSON file")
        p.add_argument("--slack-v", type=float, default=None, help="override slack voltage, p.u.")
        p.add_argument("--dg", type=_dg_list, default=None, metavar="BUS:KW,...", help="DG units to add")
        p.add_argument("--v-min", type=float, default=0.917)
        p.add_argument("--v-max", type=float, default=1.042)
        p.set_defaults(func=func)
        return p

    p = case_cmd("loadflow", cmd_loadflow, "solve the power flow")
    p.add_argument("--out", help="directory for bus/branch CSVs")

    p = case_cmd("rank", cmd_rank, "rank buses by voltage magnitude")
    p.add_argument("-k", type=int, default=3)

    p = case_cmd("attack-step", cmd_attack_step, "step load-altering attack")
    p.add_argument("--targets", type=_bus_list, required=True)
    p.add_argument("--delta", type=float, required=True, help="relative load increase, e.g. 0.15")
    p.add_argument("--out")

    p = case_cmd("attack-dynamic", cmd_attack_dynamic, "quasi-static oscillating attack")
    p.add_argument("--targets", type=_bus_list, required=True)
    p.add_argument("--peak", type=float, default=0.20)
    p.add_argument("--osc", type=float, default=0.5)
    p.add_argument("--freq", type=float, default=1.0 / 60.0, help="oscillation frequency, Hz")
    p.add_argument("--ramp", type=float, default=300.0, help="ramp duration, s")
    p.add_argument("--horizon", type=float, default=900.0)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--mode", choices=[MULTIPLICATIVE, ADDITIVE], default=MULTIPLICATIVE)
    p.add_argument("--out")

    p = case_cmd("optimize-dg", cmd_optimize_dg, "PSO placement of DG units")
    p.add_argument("--swarm", type=int, default=500)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-dg", type=int, default=3)
    p.add_argument("--alpha", type=float, default=ObjectiveWeights.alpha)
    p.add_argument("--beta", type=float, default=ObjectiveWeights.beta)
    p.add_argument("--v-ref", type=float, default=ObjectiveWeights.v_ref)
    p.add_argument("--out", help="path of the JSON optimization report")

    p = sub.add_parser("run", help="run a scenario file and write a report bundle")
    p.add_argument("scenario", help="scenario JSON path or bundled name (case-study-1/2/3)")
    p.add_argument("--out", help="bundle directory (default: runs/<scenario name>)")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FeederError, ValueError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
