"""Command-line interface: wiring, serialization, exit codes."""

import json

import numpy as np
import pytest

from inferassess.cli import main, _dump_json


@pytest.fixture
def cluster_csv(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["y,treat,state"]
    states = ["MA", "TX", "NY", "CA"]
    for i in range(40):
        state = states[i % 4]
        treat = 1 if i % 4 < 2 else 0
        lines.append(f"{rng.normal():.6f},{treat},{state}")
    path = tmp_path / "d.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _read_report(out_dir):
    return json.loads((out_dir / "report.json").read_text(encoding="utf-8"))


class TestAssess:
    def test_end_to_end_with_data_file(self, tmp_path, cluster_csv, capsys):
        out = tmp_path / "out"
        code = main(
            [
                "assess",
                "--data", str(cluster_csv),
                "--outcome", "y",
                "--x", "treat",
                "--intercept",
                "--cluster", "state",
                "--method", "crve",
                "--ref", "t",
                "--errors", "iid-normal",
                "--reps", "200",
                "--alphas", "0.05,0.10",
                "--seed", "7",
                "--out-dir", str(out),
            ]
        )
        assert code == 0
        report = _read_report(out)
        assert len(report["rejection_rates"]) == 2
        assert report["spec"]["method"]["kind"] == "crve"
        lines = (out / "pvalues.csv").read_text().strip().split("\n")
        assert lines[0] == "pvalue"
        assert len(lines) - 1 == 200 - report["failures"]["count"]
        captured = capsys.readouterr()
        assert "max over-rejection" in captured.out

    def test_reports_byte_identical_modulo_wall_time(self, tmp_path, cluster_csv):
        args = [
            "assess",
            "--data", str(cluster_csv),
            "--outcome", "y",
            "--x", "treat",
            "--intercept",
            "--method", "hc1",
            "--errors", "iid-normal",
            "--reps", "150",
            "--seed", "5",
        ]
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(args + ["--out-dir", str(out1)]) == 0
        assert main(args + ["--out-dir", str(out2)]) == 0
        a, b = _read_report(out1), _read_report(out2)
        a.pop("wall_time_s")
        b.pop("wall_time_s")
        assert _dump_json(a) == _dump_json(b)
        assert (out1 / "pvalues.csv").read_bytes() == (out2 / "pvalues.csv").read_bytes()

    def test_report_roundtrip_reproduces_values_exactly(self, tmp_path, cluster_csv):
        out = tmp_path / "out"
        main(
            [
                "assess",
                "--data", str(cluster_csv),
                "--outcome", "y",
                "--x", "treat",
                "--intercept",
                "--method", "hc1",
                "--errors", "iid-normal",
                "--reps", "150",
                "--seed", "5",
                "--out-dir", str(out),
            ]
        )
        report = _read_report(out)
        pvals = [float(line) for line in (out / "pvalues.csv").read_text().strip().split("\n")[1:]]
        for row in report["rejection_rates"]:
            assert row["rate"] == np.mean(np.asarray(pvals) <= row["alpha"])

    def test_preset_with_method_override(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(
            [
                "assess",
                "--preset", "two-sample-5-100",
                "--method", "hc1",
                "--ref", "normal",
                "--reps", "400",
                "--seed", "3",
                "--out-dir", str(out),
            ]
        )
        assert code == 0
        report = _read_report(out)
        rate = report["rejection_rates"][1]["rate"]
        assert 0.08 < rate < 0.20  # near the documented 13%

    def test_figures_written(self, tmp_path, cluster_csv):
        out = tmp_path / "out"
        code = main(
            [
                "assess",
                "--data", str(cluster_csv),
                "--outcome", "y",
                "--x", "treat",
                "--intercept",
                "--method", "hc1",
                "--errors", "iid-normal",
                "--reps", "150",
                "--seed", "5",
                "--out-dir", str(out),
                "--figures",
            ]
        )
        assert code == 0
        assert (out / "pvalue_cdf.png").stat().st_size > 0
        assert (out / "rejection_rates.png").stat().st_size > 0

    def test_config_file_with_flag_override(self, tmp_path, cluster_csv):
        config = tmp_path / "run.json"
        config.write_text(
            json.dumps(
                {
                    "data": str(cluster_csv),
                    "outcome": "y",
                    "x": "treat",
                    "intercept": True,
                    "method": "hc1",
                    "errors": "iid-normal",
                    "reps": 150,
                    "seed": 5,
                }
            ),
            encoding="utf-8",
        )
        out1, out2 = tmp_path / "c1", tmp_path / "c2"
        assert main(["assess", "--config", str(config), "--out-dir", str(out1)]) == 0
        assert main(
            ["assess", "--config", str(config), "--seed", "6", "--out-dir", str(out2)]
        ) == 0
        assert _read_report(out1)["seed"] == 5
        assert _read_report(out2)["seed"] == 6

    def test_unknown_config_key_exits_2(self, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text('{"no_such_flag": 1}', encoding="utf-8")
        assert main(["assess", "--config", str(config)]) == 2

    def test_bad_weight_data_exits_3(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x,w\n1,0,1\n2,1,0\n", encoding="utf-8")
        code = main(
            [
                "assess",
                "--data", str(path),
                "--outcome", "y",
                "--x", "x",
                "--weight", "w",
                "--method", "hc1",
                "--errors", "iid-normal",
            ]
        )
        assert code == 3

    def test_missing_method_exits_2(self, tmp_path, cluster_csv):
        code = main(
            ["assess", "--data", str(cluster_csv), "--outcome", "y", "--x", "treat",
             "--errors", "iid-normal", "--out-dir", str(tmp_path)]
        )
        assert code == 2


class TestReplicate:
    def test_unknown_preset_exits_2_and_lists(self, capsys):
        assert main(["replicate", "no-such-preset"]) == 2
        err = capsys.readouterr().err
        assert "two-sample-5-100" in err

    def test_list(self, capsys):
        assert main(["replicate", "--list"]) == 0
        out = capsys.readouterr().out
        assert "table1-panelA-N400-strata" in out

    def test_a4_identity_runs_and_passes(self, tmp_path, capsys):
        code = main(["replicate", "a4-identity", "--reps", "60", "--out-dir", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "PASS" in out
        report = _read_report(tmp_path)
        assert abs(report["ratio"] - 1.0) < 0.1

    def test_assessment_preset_writes_pvalues(self, tmp_path, capsys):
        code = main(
            ["replicate", "a31-lognormal", "--reps", "300", "--out-dir", str(tmp_path)]
        )
        assert code == 0
        assert (tmp_path / "pvalues.csv").exists()
        assert "a31-lognormal" in capsys.readouterr().out


class TestSweepAndPower:
    def test_single_ratio_file_matches_assess(self, tmp_path, cluster_csv):
        ratio_file = tmp_path / "grid.txt"
        ratio_file.write_text("1.0\n", encoding="utf-8")
        base = [
            "--data", str(cluster_csv),
            "--outcome", "y",
            "--x", "treat",
            "--intercept",
            "--method", "hc1",
            "--errors", "two-group-hetero:1.0",
            "--reps", "150",
            "--seed", "5",
        ]
        out_a, out_s = tmp_path / "a", tmp_path / "s"
        assert main(["assess"] + base + ["--out-dir", str(out_a)]) == 0
        assert main(["sweep"] + base + ["--ratio-file", str(ratio_file), "--out-dir", str(out_s)]) == 0
        pv_assess = (out_a / "pvalues.csv").read_bytes()
        pv_sweep = (out_s / "pvalues_ratio0.csv").read_bytes()
        assert pv_assess == pv_sweep

    def test_power_at_null_matches_assess(self, tmp_path, cluster_csv):
        base = [
            "--data", str(cluster_csv),
            "--outcome", "y",
            "--x", "treat",
            "--intercept",
            "--method", "hc1",
            "--errors", "iid-normal",
            "--reps", "150",
            "--seed", "5",
        ]
        out_a, out_p = tmp_path / "a", tmp_path / "p"
        assert main(["assess"] + base + ["--out-dir", str(out_a)]) == 0
        assert main(["power"] + base + ["--alternative", "0.0", "--out-dir", str(out_p)]) == 0
        assert (out_a / "pvalues.csv").read_bytes() == (out_p / "pvalues.csv").read_bytes()

    def test_sweep_needs_grid(self, tmp_path, cluster_csv):
        code = main(
            ["sweep", "--data", str(cluster_csv), "--outcome", "y", "--x", "treat",
             "--intercept", "--method", "hc1", "--errors", "iid-normal",
             "--reps", "150", "--out-dir", str(tmp_path)]
        )
        assert code == 2


class TestJsonSerialization:
    def test_seventeen_significant_digits_roundtrip(self):
        values = [0.1, 1 / 3, 1e-17, 123456789.123456789, 2.0**-52]
        text = _dump_json({"values": values})
        parsed = json.loads(text)
        assert parsed["values"] == values


class TestThreadsEnv:
    def test_env_var_sets_default_threads(self, tmp_path, cluster_csv, monkeypatch):
        monkeypatch.setenv("INFERASSESS_THREADS", "2")
        out = tmp_path / "out"
        code = main(
            [
                "assess",
                "--data", str(cluster_csv),
                "--outcome", "y",
                "--x", "treat",
                "--intercept",
                "--method", "hc1",
                "--errors", "iid-normal",
                "--reps", "150",
                "--seed", "5",
                "--out-dir", str(out),
            ]
        )
        assert code == 0
        assert _read_report(out)["spec"]["threads"] == 2


class TestShiftShareCli:
    def test_akm0_with_shock_resampling(self, tmp_path):
        rng = np.random.default_rng(1)
        n, f = 60, 6
        shares = rng.dirichlet(np.ones(f), size=n)
        shocks = rng.standard_normal(f)
        x = shares @ shocks
        y = rng.standard_normal(n)
        header = "y,x," + ",".join(f"s{j}" for j in range(f))
        rows = [
            f"{y[i]:.10f},{x[i]:.10f}," + ",".join(f"{shares[i, j]:.10f}" for j in range(f))
            for i in range(n)
        ]
        data = tmp_path / "ss.csv"
        data.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
        shocks_file = tmp_path / "shocks.csv"
        shocks_file.write_text(
            "shock\n" + "\n".join(f"{g:.10f}" for g in shocks) + "\n", encoding="utf-8"
        )
        out = tmp_path / "out"
        code = main(
            [
                "assess",
                "--data", str(data),
                "--outcome", "y",
                "--x", "x",
                "--intercept",
                "--shares", ",".join(f"s{j}" for j in range(f)),
                "--shocks-file", str(shocks_file),
                "--method", "akm0",
                "--errors", "shocks",
                "--coef", "x",
                "--reps", "200",
                "--seed", "3",
                "--out-dir", str(out),
            ]
        )
        assert code == 0
        report = _read_report(out)
        assert report["spec"]["error_model"]["kind"] == "shock_resampling"
        assert report["failures"]["count"] == 0


class TestWildCli:
    def test_wild_method_serializes_nested_variance(self, tmp_path, cluster_csv):
        out = tmp_path / "out"
        code = main(
            [
                "assess",
                "--data", str(cluster_csv),
                "--outcome", "y",
                "--x", "treat",
                "--intercept",
                "--cluster", "state",
                "--method", "wild",
                "--inner-reps", "63",
                "--errors", "iid-normal",
                "--reps", "150",
                "--seed", "4",
                "--out-dir", str(out),
            ]
        )
        assert code == 0
        report = _read_report(out)
        assert report["spec"]["method"]["kind"] == "wild_cluster"
        assert report["spec"]["method"]["variance"]["kind"] == "crve"
