import io
import json
from pathlib import Path

import pytest

from dsdsim import cli
from dsdsim.cli import UsageError, execute, expand_range, main, parse_config
from dsdsim.scenarios import REGISTRY

FAST = ["--trials", "2", "--set", "n_tx=8", "--set", "n_rx=8", "--set", "g_tx=16", "--set", "g_rx=16",
        "--frames", "6", "--set", "ls_frames=3"]


def test_run_with_seed():
    cfg = parse_config(["run", "fig3-desk", "--seed", "7"], env={})
    assert cfg.scenario == "fig3-desk" and cfg.seed == 7 and cfg.command == "run"


def test_scenario_flag_and_conflict():
    assert parse_config(["run", "--scenario", "fig4-desk"], env={}).scenario == "fig4-desk"
    with pytest.raises(UsageError):
        parse_config(["run", "fig4-desk", "--scenario", "fig5-desk"], env={})


def test_snr_range_expansion():
    assert expand_range("0:2:10") == (0, 2, 4, 6, 8, 10)
    assert expand_range("-1,3,5:5:15") == (-1, 3, 5, 10, 15)
    assert parse_config(["run", "fig4-desk", "--snr", "0:2:10"], env={}).spec().snr_db == (0, 2, 4, 6, 8, 10)
    for bad in ("0:1", "0:0:4", "5:1:0"):
        with pytest.raises(UsageError):
            expand_range(bad)


def test_unknown_keys_rejected(capsys):
    assert main(["run", "fig3-desk", "--foo"]) == 1
    assert "valid experiment keys" in capsys.readouterr().err
    assert main(["run", "fig3-desk", "--set", "bogus=1"]) == 1
    assert "snr_db" in capsys.readouterr().err
    assert main(["run", "nope"]) == 1
    assert main(["run", "fig3-desk", "--jobs", "0"]) == 1
    assert main(["run", "fig3-desk", "--set", "trials=0"]) == 1


def test_precedence(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("# sweep\nscenario = fig4-desk\nseed = 3\ntrials = 9\nsnr_db = 0:4:8\nnmse_squared = yes\n")
    env = {"DSDSIM_SEED": "99"}
    cfg = parse_config(["run", "--config", str(conf)], env=env)
    spec = cfg.spec()
    assert cfg.scenario == "fig4-desk" and spec.seed == 3 and spec.trials == 9
    assert spec.snr_db == (0.0, 4.0, 8.0) and spec.nmse_squared is True
    spec = parse_config(["run", "--config", str(conf), "--set", "trials=4", "--trials", "5", "--seed", "1"],
                        env=env).spec()
    assert spec.trials == 5 and spec.seed == 1
    assert parse_config(["run", "fig3-desk"], env=env).seed == 99
    assert parse_config(["run", "fig3-desk"], env={}).seed == 0


def test_malformed_config(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("trials 4\n")
    with pytest.raises(UsageError):
        parse_config(["run", "fig3-desk", "--config", str(bad)], env={})
    bad.write_text("mystery = 1\n")
    with pytest.raises(UsageError, match="valid keys"):
        parse_config(["run", "fig3-desk", "--config", str(bad)], env={})
    with pytest.raises(UsageError):
        parse_config(["run", "fig3-desk", "--config", str(tmp_path / "missing.txt")], env={})


def test_list():
    buf = io.StringIO()
    assert execute(parse_config(["list"], env={}), stream=buf) == 0
    names = [line.split()[0] for line in buf.getvalue().splitlines()]
    assert names == [f"fig{i}-desk" for i in range(3, 9)] == list(REGISTRY)


def test_run_artifacts_and_rerun_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    args = ["run", "fig4-desk", "--snr", "0,8", *FAST, "--format", "csv", "--format", "json"]
    assert main([*args, "--out", str(out1), "--seed", "4"]) in (0, 3)
    man = json.loads((out1 / "manifest.json").read_text())
    assert man["seed"] == 4 and man["scenario"] == "fig4-desk" and man["version"]
    assert man["config"]["snr_db"] == [0.0, 8.0]
    assert json.loads((out1 / "fig4-desk.json").read_text())[0]["scenario"] == "fig4-desk"
    # the config echo alone reproduces the table byte for byte
    assert main(["run", "--config", str(out1 / "config.txt"), "--out", str(out2)]) in (0, 3)
    assert (out1 / "fig4-desk.csv").read_bytes() == (out2 / "fig4-desk.csv").read_bytes()


def test_check_fig3_passes_and_fails(capsys):
    assert main(["check", "fig3-desk", "--trials", "30", "--snr", "0"]) == 0
    text = capsys.readouterr().out
    assert "PASS  power ratio >= 0.97 @ 0 dB" in text
    assert main(["check", "fig3-desk", "--trials", "30", "--snr", "0", "--set", "mu=0.9"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_io_failure_is_runtime_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "fig3-desk", "--trials", "1", "--snr", "0", "--out", str(blocker / "sub")]) == 2
    assert str(blocker) in capsys.readouterr().err


def test_runtime_failure_exit(monkeypatch):
    def boom(*a, **k):
        raise MemoryError("too big")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert main(["check", "fig3-desk"]) == 2
