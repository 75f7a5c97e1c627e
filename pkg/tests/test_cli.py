import numpy as np
import pytest

from vdac import cli, selftest
from vdac.experiment import read_eval_csv


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "climb.cfg"
    path.write_text("algorithm = vdac_mix\nenv.name = climb\nt_max = 160\neval_interval = 80\neval_episodes = 4\n"
                    "hidden_dim = 8\nmixer_embed = 4\nhypernet_hidden = 8\n")
    return path


def test_train_eval_aggregate(tmp_path, config, capsys):
    runs = []
    for seed in (0, 1):
        out = tmp_path / f"run{seed}"
        assert cli.main(["train", "--config", str(config), "--seed", str(seed), "--out", str(out)]) == 0
        runs.append(out)
    assert "seed" in (runs[1] / "manifest.json").read_text()
    assert cli.main(["eval", "--checkpoint", str(runs[0] / "checkpoint.bin"), "--episodes", "32"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-2] == "t_env,win_rate,mean_return,episode_len_mean"
    win = float(lines[-1].split(",")[1])
    assert 0.0 <= win <= 1.0
    agg = tmp_path / "agg.csv"
    assert cli.main(["aggregate", "--runs", *map(str, runs), "--out", str(agg)]) == 0
    assert agg.read_text().splitlines()[0].endswith("win_rate_p25,win_rate_p75")
    assert [r.t_env for r in read_eval_csv(agg)] == [0, 80, 160]


def test_errors_exit_nonzero_with_message(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("gamma = 2\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) != 0
    assert "gamma" in capsys.readouterr().err
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.bin")]) != 0
    assert "checkpoint not found" in capsys.readouterr().err
    assert cli.main(["aggregate", "--runs", str(tmp_path / "nothing"), "--out", str(tmp_path / "a.csv")]) != 0


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        cli.main(["train"])
    assert info.value.code != 0


def test_selftest_reports_each_check(monkeypatch, capsys):
    monkeypatch.setattr(selftest, "_checks", lambda: [("ok", lambda: 0.0, 1e-9), ("bad", lambda: 1.0, 1e-9)])
    assert cli.main(["selftest"]) == 1
    out = capsys.readouterr().out
    assert "PASS  ok" in out and "FAIL  bad" in out


def test_selftest_quick_checks_pass():
    assert selftest.coma_mean_advantage(100) <= 1e-12
    assert selftest.returns_max_error(30) <= 1e-12
    assert np.isfinite(selftest.mixer_min_slope(5))
