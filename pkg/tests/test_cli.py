import csv
import json
import logging
import os
import subprocess
import sys

import click
import pytest

from isacsim import cli as cli_mod
from isacsim.cli import METRICS_HEADER, SWEEP_HEADER, TRAJECTORY_HEADER, cli, parse_seeds
from isacsim.comm import NumericError

SMALL = "frames: 2\nseeds: [0]\n"


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSeedParsing:
    @pytest.mark.parametrize("text, want", [
        ("0-3", (0, 1, 2, 3)), ("1,4,7", (1, 4, 7)), ("0-2,10", (0, 1, 2, 10)), ("5", (5,)), ("3,3,1", (1, 3)),
    ])
    def test_forms(self, text, want):
        assert parse_seeds(text) == want

    @pytest.mark.parametrize("text", ["", ",", "a", "5-2", "-1"])
    def test_rejected(self, text):
        with pytest.raises(click.BadParameter):
            parse_seeds(text)


class TestRun:
    def test_writes_all_outputs(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert cli(["run", str(small_config), "--out", str(out), "--workers", "1"]) == 0
        rows = read_csv(out / "metrics.csv")
        assert tuple(rows[0]) == METRICS_HEADER
        assert len(rows) == 1 + 2 * 9 * 3
        keys = [(int(r[0]), int(r[1]), int(r[2]), r[3]) for r in rows[1:]]
        assert keys == sorted(keys)
        assert {k[2] for k in keys} == set(range(1, 10))
        traj = read_csv(out / "trajectory.csv")
        assert tuple(traj[0]) == TRAJECTORY_HEADER and len(traj) == 3
        summary = json.loads((out / "summary.json").read_text())
        assert summary["schema_version"] == 1
        assert summary["config"]["frames"] == 2
        assert set(summary["estimators"]) == {"sensing", "ls", "perfect"}
        assert not list(out.glob(".isacsim-*"))

    def test_numbers_keep_full_precision(self, small_config, tmp_path):
        out = tmp_path / "out"
        cli(["run", str(small_config), "--out", str(out), "--workers", "1"])
        for row in read_csv(out / "metrics.csv")[1:]:
            assert float(repr(float(row[4]))) == float(row[4])
            assert "," not in row[4]

    def test_flags_override_config(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert cli(["run", str(small_config), "--out", str(out), "--seeds", "3-4", "--frames", "1",
                    "--workers", "1"]) == 0
        traj = read_csv(out / "trajectory.csv")[1:]
        assert [(r[0], r[1]) for r in traj] == [("3", "0"), ("4", "0")]

    def test_empty_seeds_is_usage_error(self, small_config, tmp_path):
        out = tmp_path / "out"
        assert cli(["run", str(small_config), "--out", str(out), "--seeds", ""]) == 1
        assert not out.exists()

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("frames: 2\nn_txx: 3\n")
        assert cli(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "n_txx" in err and "line 2" in err

    def test_missing_config(self, tmp_path):
        assert cli(["run", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 1

    def test_runtime_failure_removes_partial_output(self, small_config, tmp_path, monkeypatch):
        def fail(*a, **k):
            raise NumericError("singular")

        monkeypatch.setattr(cli_mod, "run_simulation", fail)
        out = tmp_path / "fresh"
        assert cli(["run", str(small_config), "--out", str(out)]) == 2
        assert not out.exists()

    def test_failure_leaves_existing_directory_contents(self, small_config, tmp_path, monkeypatch):
        out = tmp_path / "existing"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        monkeypatch.setattr(cli_mod, "write_run_outputs", lambda *a: (_ for _ in ()).throw(OSError("disk full")))
        assert cli(["run", str(small_config), "--out", str(out), "--workers", "1"]) == 2
        assert sorted(p.name for p in out.iterdir()) == ["keep.txt"]


def _run_subprocess(config, out, threads):
    env = {**os.environ, "ISACSIM_THREADS": str(threads)}
    subprocess.run([sys.executable, "-m", "isacsim", "run", str(config), "--out", str(out), "--seeds", "1,2"],
                   check=True, env=env, capture_output=True)
    return (out / "metrics.csv").read_bytes()


def test_metrics_byte_identical_across_runs_and_threads(small_config, tmp_path):
    a = _run_subprocess(small_config, tmp_path / "a", 1)
    b = _run_subprocess(small_config, tmp_path / "b", 1)
    c = _run_subprocess(small_config, tmp_path / "c", 2)
    assert a == b == c


class TestSweep:
    def test_rows_and_plots(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("frames: 1\nseeds: [0]\n")
        out = tmp_path / "sw"
        assert cli(["sweep", str(cfg), "--param", "aps", "--values", "2,3,4,5", "--out", str(out),
                    "--plot", "--workers", "1"]) == 0
        rows = read_csv(out / "sweep.csv")
        assert tuple(rows[0]) == SWEEP_HEADER
        by_est = {}
        for r in rows[1:]:
            by_est.setdefault(r[2], []).append(r[1])
        assert by_est == {e: ["2", "3", "4", "5"] for e in ("sensing", "ls", "perfect")}
        for name in ("sweep_throughput.svg", "sweep_correlation.svg"):
            text = (out / name).read_text()
            assert text.lstrip().startswith("<?xml") and "<svg" in text
        assert "Number of APs" in (out / "sweep_throughput.svg").read_text()
        assert "Average throughput (bits/s/Hz)" in (out / "sweep_throughput.svg").read_text()
        assert "Correlation coefficient" in (out / "sweep_correlation.svg").read_text()

    def test_infeasible_value_gives_skipped_row(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("frames: 1\nseeds: [0]\nn_tx: 4\nn_rx: 4\nestimators: [perfect]\n")
        out = tmp_path / "sw"
        assert cli(["sweep", str(cfg), "--param", "aps", "--values", "2,3", "--out", str(out), "--workers", "1"]) == 0
        rows = read_csv(out / "sweep.csv")[1:]
        assert [r[3] for r in rows] == ["1", "0"]

    @pytest.mark.parametrize("values", ["2.5", "0", "9", "x"])
    def test_bad_values(self, tmp_path, small_config, values):
        assert cli(["sweep", str(small_config), "--param", "aps", "--values", values,
                    "--out", str(tmp_path / "o")]) == 1

    def test_unknown_param(self, tmp_path, small_config):
        assert cli(["sweep", str(small_config), "--param", "users", "--values", "1",
                    "--out", str(tmp_path / "o")]) == 1


@pytest.fixture
def produced(tmp_path, small_config):
    out = tmp_path / "run"
    assert cli(["run", str(small_config), "--out", str(out), "--workers", "1"]) == 0
    return out


class TestVerify:
    def test_self_comparison_passes(self, produced, capsys):
        assert cli(["verify", "--out", str(produced), "--golden", str(produced)]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "fields within tolerance" in out

    def test_perturbed_field_fails_by_name(self, produced, tmp_path, capsys):
        golden = tmp_path / "golden"
        golden.mkdir()
        s = json.loads((produced / "summary.json").read_text())
        s["estimators"]["ls"]["mean_throughput_bps_hz"] *= 1.01
        (golden / "summary.json").write_text(json.dumps(s))
        assert cli(["verify", "--out", str(produced), "--golden", str(golden)]) == 1
        captured = capsys.readouterr()
        fails = [line for line in captured.out.splitlines() if line.startswith("FAIL")]
        assert len(fails) == 1 and "estimators.ls.mean_throughput_bps_hz" in fails[0]
        assert "estimators.ls.mean_throughput_bps_hz" in captured.err

    def test_field_tolerance_absorbs_perturbation(self, produced, tmp_path):
        golden = tmp_path / "golden"
        golden.mkdir()
        s = json.loads((produced / "summary.json").read_text())
        s["estimators"]["ls"]["mean_throughput_bps_hz"] *= 1.01
        (golden / "summary.json").write_text(json.dumps(s))
        (golden / "tolerances.json").write_text(json.dumps({"fields": {"estimators.ls": {"rel": 0.02}}}))
        assert cli(["verify", "--out", str(produced), "--golden", str(golden)]) == 0

    def test_absent_tolerances_are_logged(self, produced, caplog):
        with caplog.at_level(logging.INFO, logger="isacsim"):
            assert cli(["verify", "--out", str(produced), "--golden", str(produced)]) == 0
        assert any("no tolerance file" in r.getMessage() for r in caplog.records)

    def test_missing_fixture_is_named(self, produced, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert cli(["verify", "--out", str(produced), "--golden", str(empty)]) == 1
        assert "summary.json" in capsys.readouterr().err

    def test_missing_explicit_tolerance_file(self, produced, tmp_path):
        assert cli(["verify", "--out", str(produced), "--golden", str(produced),
                    "--tolerances", str(tmp_path / "none.json")]) == 1
