import io
import json
import subprocess
import sys

import pytest

from xbarpmm import cost, noise
from xbarpmm.cli import VERIFY_CHECKS, main, read_csv


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def run_json(*argv):
    code, out, err = run(*argv, "--format", "json")
    assert code == 0, err
    return json.loads(out)


class TestVerify:
    def test_default_grid_clean(self):
        code, out, _ = run("verify")
        assert code == 0
        assert "0 mismatches" in out

    def test_fault_injection(self):
        code, out, _ = run("verify", "--fault", "barrett-mu", "--degrees", "4", "--bitwidths", "4")
        assert code == 1

    def test_bad_degree_is_usage_error(self):
        code, _, err = run("verify", "--degree", "12")
        assert code == 2 and "power of two" in err
        code, _, err = run("verify", "--degrees", "4,12")
        assert code == 2

    def test_manifest_covers_every_check(self):
        doc = run_json("verify", "--degrees", "4,8", "--bitwidths", "4,8", "--pairs", "4")
        names = [r["check"] for r in doc["manifest"]]
        assert names == list(VERIFY_CHECKS)
        assert all(r["cases"] > 0 for r in doc["manifest"])
        assert doc["summary"]["mismatches"] == 0
        assert doc["config"]["pairs"] == 4


class TestRun:
    def test_default_report(self):
        doc = run_json("run")
        assert 64 <= doc["result"]["initiation_interval"] <= 256
        assert doc["result"]["matches_reference"]
        assert doc["config"]["degree"] == 256 and doc["config"]["modulus"] == 64513
        r = doc["report"]
        assert r["throughput_kops"] == 1e3 * r["frequency_mhz"] / r["initiation_interval"]
        assert "error_stats" not in doc

    def test_byte_identical(self):
        a = run("run", "--degree", "64", "--bitwidth", "8", "--seed", "5", "--format", "json")
        b = run("run", "--degree", "64", "--bitwidth", "8", "--seed", "5", "--format", "json")
        assert a == b

    def test_noise_section(self):
        doc = run_json("run", "--degree", "16", "--bitwidth", "8", "--sigma", "0.5")
        assert set(doc["error_stats"]) == {"mean_abs_error", "max_abs_error", "error_rate"}
        assert doc["result"]["noisy"]

    def test_trace_and_out(self, tmp_path):
        trace, out = tmp_path / "t.jsonl", tmp_path / "r.csv"
        code, stdout, _ = run("run", "--degree", "32", "--bitwidth", "8", "--trace", str(trace),
                              "--out", str(out), "--format", "csv")
        assert code == 0 and stdout == ""
        recs = [json.loads(line) for line in trace.read_text().splitlines()]
        assert recs[-1]["type"] == "summary" and {r["stage"] for r in recs[:-1]} == {
            "PE_COMPUTE", "TILE_ACCUMULATE", "TILE_REDUCE"}
        text = out.read_text()
        assert text.startswith("# schema: xbarpmm-run v1\n# config: ")

    def test_table_echoes_config(self):
        code, out, _ = run("run", "--degree", "16", "--bitwidth", "8")
        assert code == 0 and out.startswith("config: {")

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"degree": 32, "bitwidth": 8, "mode": "conventional"}))
        doc = run_json("run", "--config", str(cfg), "--degree", "16")
        assert doc["config"]["degree"] == 16 and doc["config"]["mode"] == "conventional"

    @pytest.mark.parametrize("body", ['{"degre": 4}', "not json", "[1]"])
    def test_bad_config_file(self, tmp_path, body):
        cfg = tmp_path / "c.json"
        cfg.write_text(body)
        assert run("run", "--config", str(cfg))[0] == 2

    def test_bad_costs(self, tmp_path):
        assert run("run", "--costs", str(tmp_path / "nope.cfg"))[0] == 2

    def test_invalid_modulus(self):
        assert run("run", "--degree", "16", "--modulus", "16")[0] == 2

    def test_argparse_error(self):
        assert run("run", "--format", "yaml")[0] == 2
        assert run("frobnicate")[0] == 2


class TestSweep:
    def test_csv_rows_and_schema(self):
        code, out, _ = run("sweep", "--degrees", "256,512,1024", "--budgets", "64,128", "--format", "csv")
        assert code == 0
        assert out.splitlines()[0] == cost.SWEEP_SCHEMA
        rows = read_csv(out)
        assert len(rows) == 6
        assert list(rows[0])[:len(cost.SWEEP_COLUMNS)] == list(cost.SWEEP_COLUMNS)
        assert float(rows[0]["throughput_kops"]) == 3125.0

    def test_monotone_trend(self):
        doc = run_json("sweep", "--degrees", "256,512,1024,2048", "--budgets", "64")
        tp = [r["throughput_kops"] for r in doc["rows"]]
        assert tp == sorted(tp, reverse=True)

    def test_unlimited_budget(self):
        doc = run_json("sweep", "--degrees", "256", "--budgets", "none,32")
        assert [r["array_budget"] for r in doc["rows"]] == [None, 32]


class TestCompareMapping:
    def test_ratios(self):
        doc = run_json("compare-mapping")
        rows = {r["metric"]: r for r in doc["rows"]}
        assert rows["shift_adder_count"]["bit"] == 16 and rows["shift_adder_count"]["conventional"] == 1024
        assert rows["area.shift_adder"]["ratio"] <= 0.20
        assert rows["throughput_per_area"]["ratio"] >= 3

    def test_table(self):
        code, out, _ = run("compare-mapping", "--degree", "64", "--bitwidth", "8")
        assert code == 0 and "throughput_per_area" in out


class TestNoiseStudy:
    def test_sigma_zero(self):
        doc = run_json("noise-study", "--sigmas", "0", "--degrees", "8,16", "--seeds", "3")
        assert all(p["conv_mean_abs_error"] == 0 and p["ntt_mean_abs_error"] == 0 for p in doc["pairs"])
        assert doc["summary"]["holding"] == 2

    def test_csv_has_per_seed_pairs(self):
        code, out, _ = run("noise-study", "--sigmas", "0.5", "--degrees", "8", "--seeds", "4", "--format", "csv")
        assert code == 0
        assert out.splitlines()[0] == noise.PAIR_SCHEMA
        rows = read_csv(out)
        assert len(rows) == 4 and list(rows[0]) == list(noise.PAIR_COLUMNS)
        assert [int(r["seed"]) for r in rows] == [0, 1, 2, 3]


class TestDumpPlan:
    def test_n256(self):
        doc = run_json("dump-plan")
        plan = doc["plans"][0]
        assert plan["pe_count"] == 16 and len(plan["pes"]) == 16
        assert (plan["logical_arrays"], plan["physical_arrays"]) == (128, 49)
        assert len(plan["reuse_factors"]) == 49

    def test_toy(self):
        doc = run_json("dump-plan", "--toy")
        counts = {p["mode"]: p["shift_adder_count"] for p in doc["plans"]}
        assert counts == {"conventional": 8, "bit": 2}
        code, out, _ = run("dump-plan", "--toy")
        assert "shift_adder_count: 8" in out and "shift_adder_count: 2" in out

    def test_zero_operand(self):
        doc = run_json("dump-plan", "--operand", "zero")
        assert doc["plans"][0]["physical_arrays"] == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "xbarpmm", "dump-plan", "--toy", "--format", "csv"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("# schema: xbarpmm-plan v1")
