import json
import subprocess
import sys

import pytest

from uturnlab.cli import run


def _run(tmp_path, *args):
    return run([*args, "--output", str(tmp_path)])


def test_predict_headline(tmp_path, capsys):
    code = _run(tmp_path, "predict", "--target", "two_scale:1,2500,200,4000", "--h", "0.0014921", "--kmax", "8")
    assert code == 0
    assert "t* = 0.094, k* = 6, capped = false" in capsys.readouterr().out
    assert _run(tmp_path, "predict", "--target", "isotropic:1,1000", "--h", "0.0375", "--kmax", "10") == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["summary"]["t_star"] == pytest.approx(4.7625)


def test_phase_command(tmp_path, capsys):
    assert _run(tmp_path, "phase", "--kappa", "2", "--ratio", "10") == 0
    assert "accelerated: true" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, capsys):
    assert _run(tmp_path, "predict", "--target", "isotropic:1,10", "--h", "-1", "--k-max", "3") == 2
    assert "h" in capsys.readouterr().err
    assert _run(tmp_path, "predict", "--target", "cubic:3", "--h", "0.1", "--k-max", "3") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(tmp_path, "predict", "--config", str(bad)) == 2
    bad.write_text(json.dumps({"target": "isotropic:1,10", "h": 0.1, "k_max": 2, "extra": 1}))
    assert _run(tmp_path, "predict", "--config", str(bad)) == 2
    assert _run(tmp_path, "contraction", "--target", "isotropic:1,10",
                "--law", '{"variant": "exponential", "rate": 1}', "--flow", "leapfrog", "--h", "0.1") == 2


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        _run(tmp_path, "predict", "--bogus-field", "1")
    assert exc.value.code == 2


def test_failed_check_exits_1(tmp_path):
    code = _run(tmp_path, "mixing", "--target", "isotropic:1,10", "--kernel", "hmc",
                "--law", '{"variant": "point", "t": 0.0}', "--n-replicas", "20", "--horizon", "2",
                "--max-estimate", "1")
    assert code == 1


def test_report_round_trips_as_config(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    args = ["contraction", "--target", "two_scale:1,9,3,3", "--law", '{"variant": "triangular", "h": 0.1, "k_star": 3}',
            "--n-pairs", "200", "--n-steps", "2", "--seed", "5"]
    assert run([*args, "--output", str(first)]) == 0
    assert run(["contraction", "--config", str(first / "report.json"), "--output", str(second)]) == 0
    a = json.loads((first / "report.json").read_text())
    b = json.loads((second / "report.json").read_text())
    for key in ("config", "summary", "checks"):
        assert a[key] == b[key]
    assert (first / "steps.csv").read_bytes() == (second / "steps.csv").read_bytes()


def test_threads_do_not_change_output(tmp_path):
    args = ["sample", "--target", "two_scale:1,25,5,5", "--h", "0.1", "--k-max", "4", "--n-replicas", "13",
            "--n-transitions", "4", "--seed", "9"]
    assert run([*args, "--threads", "1", "--output", str(tmp_path / "a")]) == 0
    assert run([*args, "--threads", "4", "--output", str(tmp_path / "b")]) == 0
    for name in ("report.json",):
        a = json.loads((tmp_path / "a" / name).read_text())
        b = json.loads((tmp_path / "b" / name).read_text())
        a.pop("wall_clock_s"), b.pop("wall_clock_s"), a.pop("threads"), b.pop("threads")
        assert a == b
    for csv in sorted((tmp_path / "a").glob("*.csv")):
        assert csv.read_bytes() == (tmp_path / "b" / csv.name).read_bytes()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "uturnlab.cli", "phase", "--kappa", "100", "--ratio", "10",
                           "--output", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "accelerated: false" in proc.stdout


def test_missing_field_named(tmp_path, capsys):
    assert _run(tmp_path, "predict", "--h", "0.1", "--k-max", "3") == 2
    assert "target" in capsys.readouterr().err
