import csv
import json
import math

import pytest

from tcpslice.cli import main
from tcpslice.report import EPOCH_KEYS, SUMMARY_KEYS, epochs, json_safe
from tcpslice.scenario import (
    ScenarioError,
    dump_scenario,
    load_scenario,
    parse_scenario,
    shipped,
    shipped_names,
)
from tcpslice.simengine import TraceLog

EMPTY = "[network]\nvertices = a b\nedge.l = a b 10e6\n[params]\nduration_s = 0.05\n"
SINGLE = """[network]
vertices = a b
edge.l = a b 40e6
[flow.only]
source = a
destination = b
path = l
utility_weight = 5e7
[params]
gamma_e = 5e-10
gamma_j = 5e-11
duration_s = 0.5
"""


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestScenarioFiles:
    def test_shipped_names(self):
        assert shipped_names() == ["fig2", "parking_lot", "table3"]

    @pytest.mark.parametrize("name", ["fig2", "parking_lot", "table3"])
    def test_round_trip(self, name):
        sc = load_scenario(shipped(name))
        again = parse_scenario(dump_scenario(sc), name=sc.name)
        assert again == sc

    def test_fig2_contents(self):
        sc = load_scenario(shipped("fig2"))
        assert [e.capacity for e in sc.network.edges] == [100e6, 128e6]
        sched = {f.id: (f.join_time, f.leave_time) for f in sc.flows}
        assert sched == {"0": (0, 100), "1": (10, 120), "2": (40, 140)}
        assert [a for a, _, _ in epochs(sc)] == [0, 10, 40, 100, 120, 140]

    def test_table3_contents(self):
        sc = load_scenario(shipped("table3"))
        assert [e.capacity for e in sc.network.edges] == [40e6]
        assert [f.delay_target for f in sc.flows] == [1e-3, 0.5e-3]
        assert all(f.sigma == 1512 * 8 for f in sc.flows) and sc.params.l_max == 1512 * 8

    def test_errors_are_aggregated(self):
        text = SINGLE.replace("utility_weight = 5e7", "rate_min_bps = 5e6\nrate_max_bps = 1e6\nbogus = 1")
        text = text.replace("duration_s = 0.5", "duration_s = -1\nmode = sideways")
        with pytest.raises(ScenarioError) as exc:
            parse_scenario(text)
        msgs = exc.value.errors
        assert any("rate interval empty" in m for m in msgs)
        assert any("bogus" in m for m in msgs)
        assert any("duration" in m for m in msgs)
        assert any("mode" in m for m in msgs)

    def test_parse_error_names_line(self):
        with pytest.raises(ScenarioError, match="parse error"):
            parse_scenario("[network\nvertices = a")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="cannot read"):
            load_scenario(tmp_path / "nope.scenario")

    def test_defaults(self):
        sc = parse_scenario(SINGLE)
        f = sc.flows[0]
        assert (f.rate_min, f.rate_max, f.delay_target, f.sigma) == (1e6, 100e6, 1e-3, 1518 * 8)
        assert sc.params.update_interval == 5e-3 and sc.params.bound_variant == "packetized"


def test_json_safe():
    assert json_safe({"a": [math.inf, math.nan, 1.0]}) == {"a": ["inf", None, 1.0]}


class TestCli:
    def test_bounds_table3(self, capsys):
        code, out, _ = cli(capsys, "bounds", "--scenario", "table3", "--rates", "15e6,25e6")
        assert code == 0
        rows = {line.split()[0]: line.split() for line in out.splitlines()[1:]}
        assert rows["1"][-1] == "0.8064" and rows["2"][-1] == "0.4838"

    def test_bounds_default_equal_split(self, capsys, tmp_path):
        code, _, _ = cli(capsys, "bounds", "--scenario", "table3", "--out", tmp_path / "b.json")
        data = json.loads((tmp_path / "b.json").read_text())
        assert data["rates_bps"] == {"1": 20e6, "2": 20e6}
        assert data["bounds_s"]["2"]["single_term"] == pytest.approx(6.048e-4, rel=1e-12)

    def test_bounds_lone_flow(self, capsys, tmp_path):
        scen = tmp_path / "s.scenario"
        scen.write_text(SINGLE)
        cli(capsys, "bounds", "--scenario", scen, "--rates", "only=10e6", "--out", tmp_path / "b.json")
        b = json.loads((tmp_path / "b.json").read_text())["bounds_s"]["only"]
        assert b["overestimate"] == pytest.approx(1518 * 8 / 40e6, rel=1e-12)

    def test_bad_rates(self, capsys):
        code, _, err = cli(capsys, "bounds", "--scenario", "table3", "--rates", "1,2,3")
        assert code == 2 and "error" in json.loads(err)

    def test_solve(self, capsys, tmp_path):
        code, out, _ = cli(capsys, "solve", "--scenario", "table3", "--out", tmp_path / "s.json")
        rep = json.loads((tmp_path / "s.json").read_text())
        assert code == 0 and rep["converged"]
        assert rep["rates_bps"]["1"] == pytest.approx(15.808e6, rel=1e-3)
        assert rep["rates_bps"]["2"] == pytest.approx(24.192e6, rel=1e-3)
        assert rep["oracle"]["feasible"]
        assert rep["duality_gap"] < 0.01

    def test_solve_symmetric(self, capsys, tmp_path):
        scen = tmp_path / "s.scenario"
        # targets loose enough that only capacity binds
        two = SINGLE.replace("[params]", "[flow.two]\nsource = a\ndestination = b\npath = l\n"
                                         "utility_weight = 5e7\n[params]")
        scen.write_text(two.replace("utility_weight = 5e7", "utility_weight = 5e7\ndelay_target_s = 1"))
        cli(capsys, "solve", "--scenario", scen, "--out", tmp_path / "s.json")
        rates = json.loads((tmp_path / "s.json").read_text())["rates_bps"]
        assert rates["only"] == pytest.approx(20e6, rel=1e-3) and rates["two"] == pytest.approx(20e6, rel=1e-3)

    def test_compare_fairness(self, capsys, tmp_path):
        code, out, _ = cli(capsys, "compare-fairness", "--scenario", "table3", "--out", tmp_path / "f.json")
        rep = json.loads((tmp_path / "f.json").read_text())
        assert rep["equal_split"]["2"]["verdict"] == "violated"
        assert rep["equal_split"]["2"]["bound_s"] == pytest.approx(6.048e-4, rel=1e-12)
        assert {r["verdict"] for r in rep["solver"].values()} == {"satisfied"}

    def test_compare_fairness_single_flow(self, capsys, tmp_path):
        scen = tmp_path / "s.scenario"
        scen.write_text(SINGLE)
        cli(capsys, "compare-fairness", "--scenario", scen, "--out", tmp_path / "f.json")
        rep = json.loads((tmp_path / "f.json").read_text())
        assert rep["equal_split"]["only"]["rate_bps"] == pytest.approx(rep["solver"]["only"]["rate_bps"], rel=1e-4)

    def test_simulate_outputs(self, capsys, tmp_path):
        code, _, _ = cli(capsys, "simulate", "--scenario", "table3", "--duration", "0.5", "--out", tmp_path)
        assert code == 0
        with open(tmp_path / "flows.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == TraceLog.FLOW_COLUMNS and len(rows) == 1 + 2 * 100
        with open(tmp_path / "edges.csv") as fh:
            assert tuple(next(csv.reader(fh))) == TraceLog.EDGE_COLUMNS
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert tuple(summary) == SUMMARY_KEYS
        assert all(tuple(ep) == EPOCH_KEYS for ep in summary["epochs"])

    def test_simulate_empty_scenario(self, capsys, tmp_path):
        scen = tmp_path / "e.scenario"
        scen.write_text(EMPTY)
        cli(capsys, "simulate", "--scenario", scen, "--out", tmp_path / "o")
        assert (tmp_path / "o" / "flows.csv").read_text() == ",".join(TraceLog.FLOW_COLUMNS) + "\n"

    def test_seed_override_changes_trace(self, capsys, tmp_path):
        for seed in (1, 2):
            cli(capsys, "simulate", "--scenario", "table3", "--duration", "0.5", "--seed", seed,
                "--no-fluid", "--out", tmp_path / str(seed))
        assert (tmp_path / "1" / "flows.csv").read_bytes() != (tmp_path / "2" / "flows.csv").read_bytes()

    def test_twin_empty_network_join(self, capsys, tmp_path):
        scen = tmp_path / "s.scenario"
        scen.write_text(SINGLE)
        code, out, _ = cli(capsys, "twin", "--scenario", scen, "--out", tmp_path / "t")
        assert code == 0
        t = tmp_path / "t"
        assert (t / "reactive_flows.csv").exists() and (t / "proactive_summary.json").exists()
        rep = json.loads((t / "transients.json").read_text())
        assert rep["joins"]["proactive"][0]["overshoot_s"] == 0.0

    def test_missing_scenario(self, capsys, tmp_path):
        code, _, err = cli(capsys, "simulate", "--scenario", tmp_path / "nope.scenario", "--out", tmp_path)
        line = json.loads(err)
        assert code == 2 and line["error"] in ("invalid_scenario", "bad_argument", "unknown_scenario")

    def test_invalid_scenario(self, capsys, tmp_path):
        scen = tmp_path / "bad.scenario"
        scen.write_text(SINGLE.replace("utility_weight = 5e7", "rate_min_bps = 9e9"))
        code, _, err = cli(capsys, "solve", "--scenario", scen)
        line = json.loads(err)
        assert code == 2 and line["error"] == "invalid_scenario" and line["details"]

    def test_unwritable_out(self, capsys, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, err = cli(capsys, "simulate", "--scenario", "table3", "--duration", "0.05",
                           "--out", blocker / "sub")
        assert code == 1 and json.loads(err)["error"] == "io_error"

    def test_bad_argument(self, capsys):
        code, _, err = cli(capsys, "simulate", "--scenario", "table3", "--mode", "sideways", "--out", "x")
        assert code == 2 and json.loads(err)["error"] == "bad_argument"
