"""Scenario files and report bundles.

A scenario names a case, an operating profile and an ordered list of actions.
Running it writes one bundle directory holding every artifact, a summary
table and ``manifest.json`` with a SHA-256 for each file.  The bundle is
built in a temporary sibling directory and renamed into place at the end.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from . import __version__
from .attacks import (
    AttackSpec,
    DynamicAttackSpec,
    StepAttackResult,
    run_step_attack,
    run_time_series,
    write_time_series_csv,
)
from .dgopt import ObjectiveWeights, PsoConfig, optimization_report, pso_optimize
from .errors import FeederError, PowerFlowError, ScenarioError
from .netmodel import BUNDLED_CASES, NetworkCase, apply_dg, resolve_case
from .powerflow import (
    DEFAULT_BAND,
    PowerFlowSolution,
    VoltageBand,
    check_limits,
    rank_vm,
    select_critical,
    solve,
    total_losses,
    write_solution_csv,
)

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "attacked_nodes",
    "n_dgs",
    "load_increase_pct",
    "real_pl_kw",
    "reactive_pl_kvar",
    "lowest_v_pu",
)

BUNDLED_SCENARIOS = ("case-study-1", "case-study-2", "case-study-3")

_ACTION_KEYS = {
    "solve": {"label"},
    "rank": {"k"},
    "step-attack": {"targets", "deltas"},
    "dynamic-attack": {
        "targets",
        "peak",
        "osc",
        "freq",
        "ramp",
        "horizon",
        "dt",
        "mode",
    },
    "optimize-dg": {
        "swarm",
        "iterations",
        "seed",
        "inertia",
        "cognitive",
        "social",
        "velocity_clamp",
        "n_dg",
        "alpha",
        "beta",
        "v_ref",
        "band_penalty",
        "use_result",
    },
}


@dataclass(frozen=True)
class Scenario:
    name: str
    case: str
    slack_voltage: float | None
    band: VoltageBand
    steps: tuple[dict, ...]
    output: str | None = None
    source: dict | None = dataclasses.field(default=None, compare=False, repr=False)
    base_dir: Path = Path(".")

    def digest(self) -> str:
        blob = json.dumps(self.source, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def load_case(self) -> NetworkCase:
        ref: str | Path = self.case
        if ref not in BUNDLED_CASES:
            ref = self.base_dir / ref
        case = resolve_case(ref)
        if self.slack_voltage is not None:
            case = case.with_slack_voltage(self.slack_voltage)
        return case


def parse_scenario(doc: dict, base_dir: Path = Path(".")) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(doc) - {"name", "description", "case", "profile", "steps", "output"}
    if unknown:
        raise ScenarioError(f"unknown scenario key(s): {sorted(unknown)}")
    if "case" not in doc:
        raise ScenarioError("scenario is missing 'case'")
    profile = doc.get("profile", {})
    band = profile.get("band", [DEFAULT_BAND.v_min, DEFAULT_BAND.v_max])
    try:
        band = VoltageBand(float(band[0]), float(band[1]))
    except (TypeError, ValueError, IndexError) as exc:
        raise ScenarioError(f"invalid voltage band {band!r}") from exc
    steps = doc.get("steps", [])
    for i, step in enumerate(steps):
        action = step.get("action") if isinstance(step, dict) else None
        if action not in _ACTION_KEYS:
            raise ScenarioError(f"step {i}: unknown action {action!r}")
        extra = set(step) - _ACTION_KEYS[action] - {"action"}
        if extra:
            raise ScenarioError(f"step {i} ({action}): unknown parameter(s) {sorted(extra)}")
    slack = profile.get("slack_voltage_pu")
    return Scenario(
        name=str(doc.get("name", "scenario")),
        case=str(doc["case"]),
        slack_voltage=None if slack is None else float(slack),
        band=band,
        steps=tuple(steps),
        output=doc.get("output"),
        source=doc,
        base_dir=base_dir,
    )


def bundled_scenario_path(name: str) -> Path:
    return Path(str(resources.files("feederguard") / "scenarios" / f"{name}.json"))


def load_scenario(ref: str | Path) -> Scenario:
    path = Path(ref)
    if isinstance(ref, str) and ref in BUNDLED_SCENARIOS and not path.exists():
        path = bundled_scenario_path(ref)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return parse_scenario(doc, base_dir=path.parent)


# -- summary table -----------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    attacked_nodes: tuple[int, ...]
    n_dgs: int
    load_increase: float
    real_pl_kw: float
    reactive_pl_kvar: float
    lowest_v_pu: float

    def cells(self) -> list[str]:
        nodes = ", ".join(str(b) for b in self.attacked_nodes) if self.attacked_nodes else "none"
        return [
            nodes,
            str(self.n_dgs),
            f"{self.load_increase * 100:g}",
            repr(self.real_pl_kw),
            repr(self.reactive_pl_kvar),
            repr(self.lowest_v_pu),
        ]


def summary_row(result: PowerFlowSolution | StepAttackResult) -> SummaryRow:
    if isinstance(result, StepAttackResult):
        sol, targets, delta = result.attacked, tuple(sorted(result.spec.targets)), result.spec.delta
    else:
        sol, targets, delta = result, (), 0.0
    if not sol.converged:
        raise PowerFlowError("summary table rejects unconverged results")
    p, q = total_losses(sol)
    return SummaryRow(targets, len(sol.case.dg_units), delta, p, q, sol.min_voltage()[1])


def emit_summary_table(results) -> str:
    """CSV text with one row per result, columns in ``SUMMARY_COLUMNS`` order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in results:
        row = r if isinstance(r, SummaryRow) else summary_row(r)
        w.writerow(row.cells())
    return buf.getvalue()


# -- runner ------------------------------------------------------------------


@dataclass
class ReportBundle:
    path: Path
    manifest: dict
    summary: list[SummaryRow]

    @property
    def artifacts(self) -> dict[str, str]:
        return {a["path"]: a["sha256"] for a in self.manifest["artifacts"]}


class _Run:
    """Mutable state threaded through the actions of one scenario run."""

    def __init__(self, scenario: Scenario, workdir: Path):
        self.scenario = scenario
        self.workdir = workdir
        self.case = scenario.load_case()
        self.base_case = self.case
        self.critical: list[int] | None = None
        self.summary: list[SummaryRow] = []
        self.files: list[str] = []
        self.notes: list[dict] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.workdir / name

    def targets(self, spec) -> list[int]:
        if spec == "critical":
            if self.critical is None:
                raise ScenarioError("targets 'critical' used before any rank action")
            return list(self.critical)
        return [int(b) for b in spec]

    # actions -------------------------------------------------------------

    def do_solve(self, n: int, step: dict):
        sol = solve(self.case)
        sol.require_converged()
        write_solution_csv(sol, self.path(f"{n:02d}_solve_buses.csv"), self.path(f"{n:02d}_solve_branches.csv"))
        self.summary.append(summary_row(sol))
        lim = check_limits(sol, self.scenario.band)
        p, q = total_losses(sol)
        self.notes.append(
            {
                "step": n,
                "action": "solve",
                "label": step.get("label", ""),
                "n_dgs": len(self.case.dg_units),
                "p_loss_kw": p,
                "q_loss_kvar": q,
                "min_voltage_pu": lim.v_min,
                "min_voltage_bus": lim.min_bus,
                "violations": [b for b, _ in lim.violations],
            }
        )

    def do_rank(self, n: int, step: dict):
        sol = solve(self.case)
        ranking = rank_vm(sol)
        k = int(step.get("k", 3))
        self.critical = select_critical(ranking, k)
        with open(self.path(f"{n:02d}_rank.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "bus_id", "v_pu"])
            for e in ranking.entries:
                w.writerow([e.rank, e.bus, repr(e.vm)])
        self.notes.append({"step": n, "action": "rank", "critical": self.critical})

    def do_step_attack(self, n: int, step: dict):
        targets = self.targets(step.get("targets", "critical"))
        deltas = [float(d) for d in step.get("deltas", [0.05, 0.10, 0.15])]
        results = [run_step_attack(self.case, AttackSpec(targets, d)) for d in deltas]
        base = results[0].baseline if results else solve(self.case)
        p0, q0 = total_losses(base)
        with open(self.path(f"{n:02d}_step_attack.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["attacked_nodes", "load_increase_pct", "p_loss_kw", "q_loss_kvar",
                 "p_loss_change_pct", "q_loss_change_pct", "lowest_v_pu", "lowest_v_bus", "breach"]
            )
            for r in results:
                p, q = r.losses
                bus, vmin = r.attacked.min_voltage()
                lim = check_limits(r.attacked, self.scenario.band)
                w.writerow(
                    [" ".join(str(b) for b in sorted(targets)), f"{r.spec.delta * 100:g}", repr(p), repr(q),
                     repr(100 * (p - p0) / p0), repr(100 * (q - q0) / q0), repr(vmin), bus, int(lim.breach)]
                )
        # voltage profiles, one column per attack level (plot-ready)
        with open(self.path(f"{n:02d}_step_profiles.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bus_id", "v_base_pu"] + [f"v_plus_{r.spec.delta * 100:g}pct_pu" for r in results])
            cols = [base.vm] + [r.attacked.vm for r in results]
            for i, bus in enumerate(self.case.bus_ids):
                w.writerow([bus] + [repr(float(c[i])) for c in cols])
        self.summary.extend(summary_row(r) for r in results)

    def do_dynamic_attack(self, n: int, step: dict):
        spec = DynamicAttackSpec(
            targets=self.targets(step.get("targets", "critical")),
            peak_delta=float(step.get("peak", 0.20)),
            oscillation_ratio=float(step.get("osc", 0.5)),
            oscillation_frequency=float(step.get("freq", 1.0 / 60.0)),
            ramp_duration=float(step.get("ramp", 300.0)),
            horizon=float(step.get("horizon", 900.0)),
            time_step=float(step.get("dt", 1.0)),
            mode=str(step.get("mode", "multiplicative")),
        )
        ts = run_time_series(self.case, spec, self.scenario.band)
        write_time_series_csv(
            ts, self.path(f"{n:02d}_dynamic_summary.csv"), self.path(f"{n:02d}_dynamic_voltages.csv")
        )
        worst = ts.min_sample
        self.notes.append(
            {
                "step": n,
                "action": "dynamic-attack",
                "targets": sorted(spec.targets),
                "min_voltage_pu": ts.min_voltage,
                "min_voltage_bus": worst.min_bus,
                "min_voltage_t_s": worst.t,
                "first_breach_t_s": ts.first_breach,
            }
        )

    def do_optimize_dg(self, n: int, step: dict):
        config = PsoConfig(
            swarm_size=int(step.get("swarm", 500)),
            iterations=int(step.get("iterations", 100)),
            seed=int(step.get("seed", 0)),
            inertia=float(step.get("inertia", PsoConfig.inertia)),
            cognitive=float(step.get("cognitive", PsoConfig.cognitive)),
            social=float(step.get("social", PsoConfig.social)),
            velocity_clamp=float(step.get("velocity_clamp", PsoConfig.velocity_clamp)),
            n_dg=int(step.get("n_dg", 3)),
        )
        weights = ObjectiveWeights(
            v_ref=float(step.get("v_ref", ObjectiveWeights.v_ref)),
            alpha=float(step.get("alpha", ObjectiveWeights.alpha)),
            beta=float(step.get("beta", ObjectiveWeights.beta)),
            band_penalty=float(step.get("band_penalty", ObjectiveWeights.band_penalty)),
            band=self.scenario.band,
        )
        result = pso_optimize(self.case, weights, config)
        report = optimization_report(self.case, result)
        with open(self.path(f"{n:02d}_optimize_dg.json"), "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        if step.get("use_result", True):
            self.case = apply_dg(self.case, result.best_placement)
        self.notes.append(
            {"step": n, "action": "optimize-dg", "placement": result.best_placement.as_pairs(),
             "applied": bool(step.get("use_result", True))}
        )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(run: _Run | None, scenario: Scenario, workdir: Path, error: dict | None) -> dict:
    files = run.files if run is not None else []
    return {
        "tool": "feederguard",
        "version": __version__,
        "scenario": scenario.name,
        "scenario_sha256": scenario.digest(),
        "case_sha256": run.base_case.digest() if run is not None else None,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "status": "error" if error else "ok",
        "error": error,
        "steps": run.notes if run is not None else [],
        "artifacts": [
            {"path": f, "sha256": _sha256(workdir / f), "bytes": (workdir / f).stat().st_size}
            for f in files
            if (workdir / f).exists()
        ],
    }


def run_scenario(
    scenario: Scenario | str | Path, output: str | Path | None = None, overwrite: bool = False
) -> ReportBundle:
    """Execute every action in order and write the bundle to ``output``.

    A failing action stops the run; the bundle is still written with the
    artifacts produced so far and an error record in the manifest, and
    :class:`ScenarioError` is raised afterwards.
    """
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    out = Path(output or scenario.output or Path("runs") / scenario.name)
    if out.exists():
        if not overwrite:
            raise ScenarioError(f"output directory {out} already exists")
    out.parent.mkdir(parents=True, exist_ok=True)
    workdir = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))

    run = None
    error = None
    try:
        run = _Run(scenario, workdir)
        for n, step in enumerate(scenario.steps, start=1):
            action = step["action"]
            log.info("step %d: %s", n, action)
            getattr(run, "do_" + action.replace("-", "_"))(n, step)
        if run.summary:
            (workdir / "summary.csv").write_text(emit_summary_table(run.summary))
            run.files.append("summary.csv")
    except (FeederError, ValueError) as exc:
        error = {"type": type(exc).__name__, "message": str(exc)}

    manifest = _manifest(run, scenario, workdir, error)
    (workdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if out.exists():
        shutil.rmtree(out)
    os.replace(workdir, out)

    if error:
        raise ScenarioError(f"scenario {scenario.name!r} failed: {error['type']}: {error['message']}")
    return ReportBundle(out, manifest, run.summary)


def verify_bundle(path: str | Path) -> bool:
    """True when every artifact listed in the manifest exists with its recorded hash."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    return all(
        (path / a["path"]).exists() and _sha256(path / a["path"]) == a["sha256"] for a in manifest["artifacts"]
    )
