import csv
import io
import json

import pytest

from feederguard.attacks import AttackSpec, run_step_attack
from feederguard.cli import main
from feederguard.errors import PowerFlowError, ScenarioError
from feederguard.powerflow import solve
from feederguard.scenario import (
    BUNDLED_SCENARIOS,
    SUMMARY_COLUMNS,
    emit_summary_table,
    load_scenario,
    parse_scenario,
    run_scenario,
    summary_row,
    verify_bundle,
)


def scenario(steps, **extra):
    doc = {"name": "t", "case": "ieee33", "profile": {"slack_voltage_pu": 1.0}, "steps": steps}
    doc.update(extra)
    return parse_scenario(doc)


def strip_created(manifest):
    return {k: v for k, v in manifest.items() if k != "created"}


class TestParse:
    @pytest.mark.parametrize("name", BUNDLED_SCENARIOS)
    def test_bundled(self, name):
        sc = load_scenario(name)
        assert sc.case == "ieee33" and sc.slack_voltage == 0.99
        assert sc.band.v_min == 0.917 and sc.band.v_max == 1.042
        assert sc.load_case().slack_voltage == 0.99

    @pytest.mark.parametrize(
        "doc",
        [
            [],
            {"steps": []},
            {"case": "ieee33", "bogus": 1},
            {"case": "ieee33", "steps": [{"action": "explode"}]},
            {"case": "ieee33", "steps": [{"action": "solve", "delta": 3}]},
            {"case": "ieee33", "profile": {"band": [0.9]}},
        ],
    )
    def test_rejects(self, doc):
        with pytest.raises(ScenarioError):
            parse_scenario(doc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(tmp_path / "nope.json")

    def test_relative_case_path(self, tmp_path, ieee33):
        from feederguard.netmodel import case_to_dict

        (tmp_path / "feeder.json").write_text(json.dumps(case_to_dict(ieee33)))
        (tmp_path / "s.json").write_text(json.dumps({"case": "feeder.json"}))
        assert load_scenario(tmp_path / "s.json").load_case() == ieee33


class TestSummaryTable:
    def test_header_only(self):
        assert emit_summary_table([]) == ",".join(SUMMARY_COLUMNS) + "\n"

    def test_rows(self, ieee33):
        base = solve(ieee33)
        attack = run_step_attack(ieee33, AttackSpec({18, 10, 17}, 0.15))
        rows = list(csv.reader(io.StringIO(emit_summary_table([base, attack]))))
        assert rows[0] == list(SUMMARY_COLUMNS)
        assert rows[1][:3] == ["none", "0", "0"]
        assert rows[2][:3] == ["10, 17, 18", "0", "15"]
        assert float(rows[2][3]) == attack.losses[0]
        assert float(rows[2][5]) == attack.min_voltage

    def test_rejects_unconverged(self):
        from conftest import make_toy2

        with pytest.raises(PowerFlowError):
            summary_row(solve(make_toy2(4000.0, 4000.0, 10.0, 10.0)))


class TestRunScenario:
    def test_empty_scenario(self, tmp_path):
        bundle = run_scenario(scenario([]), tmp_path / "out")
        assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["manifest.json"]
        assert bundle.manifest["artifacts"] == [] and bundle.manifest["status"] == "ok"

    def test_hashes_and_determinism(self, tmp_path):
        steps = [
            {"action": "solve"},
            {"action": "rank", "k": 3},
            {"action": "step-attack", "targets": "critical", "deltas": [0.05, 0.1]},
            {"action": "dynamic-attack", "targets": [17, 18], "horizon": 30, "ramp": 10, "dt": 5},
        ]
        a = run_scenario(scenario(steps), tmp_path / "a")
        b = run_scenario(scenario(steps), tmp_path / "b")
        assert verify_bundle(a.path) and verify_bundle(b.path)
        assert strip_created(a.manifest) == strip_created(b.manifest)
        names = set(a.artifacts)
        assert {"01_solve_buses.csv", "03_step_attack.csv", "04_dynamic_summary.csv", "summary.csv"} <= names
        assert a.manifest["steps"][1]["critical"] == [18, 17, 16]
        assert len(a.summary) == 3
        # leftover temp dirs would show up as siblings
        assert sorted(p.name for p in tmp_path.iterdir()) == ["a", "b"]

    def test_tamper_detected(self, tmp_path):
        bundle = run_scenario(scenario([{"action": "solve"}]), tmp_path / "out")
        (bundle.path / "01_solve_buses.csv").write_text("x\n")
        assert not verify_bundle(bundle.path)

    def test_existing_output(self, tmp_path):
        run_scenario(scenario([]), tmp_path / "out")
        with pytest.raises(ScenarioError):
            run_scenario(scenario([]), tmp_path / "out")
        run_scenario(scenario([{"action": "solve"}]), tmp_path / "out", overwrite=True)
        assert verify_bundle(tmp_path / "out")

    def test_optimize_result_feeds_later_steps(self, tmp_path):
        steps = [
            {"action": "solve"},
            {"action": "optimize-dg", "swarm": 10, "iterations": 3, "seed": 1},
            {"action": "solve"},
        ]
        bundle = run_scenario(scenario(steps), tmp_path / "out")
        notes = bundle.manifest["steps"]
        assert notes[0]["n_dgs"] == 0 and notes[2]["n_dgs"] == 3
        assert notes[2]["p_loss_kw"] < notes[0]["p_loss_kw"]
        report = json.loads((bundle.path / "02_optimize_dg.json").read_text())
        assert report["seed"] == 1
        assert [p[0] for p in notes[1]["placement"]] == [u["bus"] for u in report["best_placement"]]

    def test_optimize_without_use_result(self, tmp_path):
        steps = [
            {"action": "optimize-dg", "swarm": 5, "iterations": 1, "use_result": False},
            {"action": "solve"},
        ]
        bundle = run_scenario(scenario(steps), tmp_path / "out")
        assert bundle.manifest["steps"][1]["n_dgs"] == 0

    def test_critical_before_rank(self, tmp_path):
        with pytest.raises(ScenarioError, match="critical"):
            run_scenario(scenario([{"action": "step-attack"}]), tmp_path / "out")
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["status"] == "error"
        assert "critical" in manifest["error"]["message"]

    def test_case_study_1(self, tmp_path):
        bundle = run_scenario("case-study-1", tmp_path / "cs1")
        rows = list(csv.DictReader(open(bundle.path / "summary.csv")))
        assert [r["load_increase_pct"] for r in rows] == ["0", "5", "10", "15"]
        assert rows[1]["attacked_nodes"] == "16, 17, 18"
        losses = [float(r["real_pl_kw"]) for r in rows]
        assert losses == sorted(losses)


class TestCli:
    def test_loadflow(self, capsys, tmp_path):
        assert main(["loadflow", "ieee33", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "202.6" in out and "bus 18" in out
        assert (tmp_path / "buses.csv").exists() and (tmp_path / "branches.csv").exists()

    def test_rank(self, capsys):
        assert main(["rank", "ieee33", "-k", "3"]) == 0
        assert "critical: 18,17,16" in capsys.readouterr().out

    def test_attack_step(self, capsys):
        assert main(["attack-step", "ieee33", "--targets", "16,17,18", "--delta", "0.1"]) == 0
        assert "load +10%" in capsys.readouterr().out

    def test_attack_dynamic(self, capsys, tmp_path):
        args = ["attack-dynamic", "ieee33", "--targets", "17,18", "--horizon", "20", "--ramp", "10", "--dt", "5"]
        assert main(args + ["--out", str(tmp_path)]) == 0
        assert "5 samples" in capsys.readouterr().out
        assert (tmp_path / "dynamic_summary.csv").exists()

    def test_optimize_dg(self, capsys, tmp_path):
        out = tmp_path / "opt.json"
        args = ["optimize-dg", "ieee33", "--swarm", "8", "--iters", "2", "--seed", "5", "--out", str(out)]
        assert main(args) == 0
        report = json.loads(out.read_text())
        assert report["seed"] == 5 and report["evaluations"] == 24
        assert "DG at bus" in capsys.readouterr().out

    def test_dg_option(self, capsys):
        assert main(["loadflow", "ieee33", "--dg", "30:852,24:765,14:718"]) == 0
        assert "3 DG" in capsys.readouterr().out

    def test_run(self, capsys, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"case": "ieee33", "steps": [{"action": "solve"}]}))
        assert main(["run", str(tmp_path / "s.json"), "--out", str(tmp_path / "b")]) == 0
        assert verify_bundle(tmp_path / "b")

    @pytest.mark.parametrize(
        "argv, kind",
        [
            (["loadflow", "nosuchcase"], "CaseError"),
            (["attack-step", "ieee33", "--targets", "1", "--delta", "0.1"], "BoundsError"),
            (["loadflow", "ieee33", "--dg", "1:500"], "BoundsError"),
            (["rank", "ieee33", "-k", "40"], "ValueError"),
        ],
    )
    def test_errors(self, capsys, argv, kind):
        assert main(argv) == 1
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["error"] == kind
        assert record["command"] == argv[0]
