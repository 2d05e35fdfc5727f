import json

import pytest

from seqtrial.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def three_looks(tmp_path):
    p = tmp_path / "k3.json"
    p.write_text(json.dumps({"looks": 3, "info": [1, 2, 3], "upper_z": [3.4, 2.4, 2.0],
                             "lower_z": None, "sided": 1}))
    return str(p)


class TestAnalyze:
    def test_table(self, capsys, data_file, design_file):
        code, out, _ = run(capsys, "analyze", "--data", data_file, "--design", design_file,
                           "--primary", "umvue")
        assert code == 0
        assert "UMVUE [primary]" in out
        assert "0.1278" in out and "0.1909" in out
        assert "naive" in out

    def test_json(self, capsys, data_file, design_file):
        code, out, _ = run(capsys, "analyze", "--data", data_file, "--design", design_file,
                           "--primary", "mue", "--format", "json")
        doc = json.loads(out)
        assert code == 0
        assert doc["primary"] == "mue"
        assert doc["estimates"]["umvcue"]["value"] == pytest.approx(0.172352, abs=1e-6)
        assert doc["inputs"]["efficacy_boundary_estimate_scale"] == pytest.approx(0.1581,
                                                                                  abs=1e-4)

    def test_csv_input(self, capsys, design_file):
        from seqtrial.datasets import data_path
        code, out, _ = run(capsys, "analyze", "--data", str(data_path("musec_data.csv")),
                           "--design", design_file, "--primary", "ubc_mle")
        assert code == 0 and "0.1328" in out

    def test_primary_required(self, capsys, data_file, design_file):
        with pytest.raises(SystemExit) as exc:
            main(["analyze", "--data", data_file, "--design", design_file])
        assert exc.value.code == 2

    def test_unsupported_design(self, capsys, data_file, three_looks):
        code, _, err = run(capsys, "analyze", "--data", data_file, "--design", three_looks,
                           "--primary", "umvue")
        assert code == 2
        assert "estimators support efficacy-only two-stage designs" in err

    def test_invalid_data(self, capsys, tmp_path, design_file):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"stages": [{"control": {"responders": 5, "total": 3},
                                             "experimental": {"responders": 1, "total": 4}}]}))
        code, _, err = run(capsys, "analyze", "--data", str(p), "--design", design_file,
                           "--primary", "umvue")
        assert code == 2
        assert "stage 1: control.responders 5 exceeds control.total 3" in err

    def test_missing_file(self, capsys, design_file):
        code, _, _ = run(capsys, "analyze", "--data", "/nonexistent.json", "--design",
                         design_file, "--primary", "umvue")
        assert code == 2


class TestOtherCommands:
    def test_boundaries(self, capsys):
        code, out, _ = run(capsys, "boundaries", "--family", "obf", "--looks", "2",
                           "--info", "312.8,393.7")
        doc = json.loads(out)
        assert code == 0
        assert doc["info"] == [312.8, 393.7]
        assert doc["upper_z"][1] == pytest.approx(1.9774, abs=1e-4)

    def test_haybittle_peto(self, capsys):
        code, out, _ = run(capsys, "boundaries", "--family", "haybittle-peto", "--looks", "3",
                           "--no-calibrate")
        assert json.loads(out)["upper_z"][-1] == pytest.approx(1.959964, abs=1e-6)

    def test_stopprob(self, capsys, design_file):
        code, out, _ = run(capsys, "stopprob", "--design", design_file, "--theta", "0")
        doc = json.loads(out)
        assert code == 0
        assert doc["efficacy"][0] == pytest.approx(0.0025790, abs=1e-6)

    def test_stopprob_mc_needs_seed(self, capsys, design_file):
        code, _, err = run(capsys, "stopprob", "--design", design_file, "--theta", "0",
                           "--method", "mc")
        assert code == 2 and "--seed" in err

    def test_bootstrap(self, capsys, data_file, design_file):
        code, out, _ = run(capsys, "bootstrap", "--data", data_file, "--design", design_file,
                           "--true-diff", "0.14", "--reps", "5000", "--seed", "1",
                           "--format", "json", "--threads", "1")
        doc = json.loads(out)
        assert code == 0
        assert doc["replicates_used"] + doc["replicates_dropped"] == 5000
        assert doc["se_unconditional"]["cbc_mle"] is None

    @pytest.mark.filterwarnings("ignore:interim Wald statistic")
    def test_bootstrap_numeric_failure(self, capsys, data_file, tmp_path):
        p = tmp_path / "d.json"
        p.write_text(json.dumps({"looks": 2, "info": [312.8, 393.7], "upper_z": [-10, 1.977]}))
        code, _, err = run(capsys, "bootstrap", "--data", data_file, "--design", str(p),
                           "--true-diff", "0.14", "--reps", "2000", "--seed", "1")
        assert code == 3 and "numerical failure" in err

    def test_simulate(self, capsys, design_file, tmp_path):
        out_path = tmp_path / "sim.csv"
        code, _, _ = run(capsys, "simulate", "--design", design_file, "--theta-grid",
                         "0:0.1:0.1", "--reps", "5000", "--seed", "3", "--out", str(out_path),
                         "--estimators", "umvue,mue")
        lines = out_path.read_text().splitlines()
        assert code == 0
        assert len(lines) == 5
        assert lines[1].split(",")[:2] == ["0.0", "umvue"]

    def test_simulate_binomial(self, capsys, design_file, data_file):
        code, out, _ = run(capsys, "simulate", "--design", design_file, "--theta-grid",
                           "0.14:0.14:1", "--reps", "5000", "--seed", "3", "--out", "-",
                           "--model", "binomial", "--data", data_file, "--format", "json",
                           "--estimators", "mle_stage1")
        doc = json.loads(out)
        assert code == 0 and doc["model"] == "binomial"

    def test_simulate_binomial_needs_data(self, capsys, design_file):
        code, _, err = run(capsys, "simulate", "--design", design_file, "--theta-grid",
                           "0:0.1:0.1", "--reps", "100", "--seed", "3", "--out", "-",
                           "--model", "binomial")
        assert code == 2 and "--data" in err

    def test_simulate_bad_grid(self, capsys, design_file):
        code, _, _ = run(capsys, "simulate", "--design", design_file, "--theta-grid", "0:1",
                         "--reps", "100", "--seed", "3", "--out", "-")
        assert code == 2
