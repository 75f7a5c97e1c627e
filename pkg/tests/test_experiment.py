import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdac.envs import MatrixGameSpec
from vdac.experiment import (
    AGG_COLUMNS,
    ConfigError,
    EvalRecord,
    aggregate_runs,
    emit_csv,
    evaluate,
    format_config,
    nearest_rank,
    parse_config,
    parse_config_text,
    read_eval_csv,
    run_training,
)
from vdac.trainer import TrainConfig

from conftest import TablePolicy

# Exact binomial 99% central interval for 32 trials at p = 1/9 (scipy.stats.binom.interval(0.99, 32, 1/9)).
# P(X = 0) = (8/9)^32 ~ 0.023 > 0.005, so the lower end is 0; P(X > 9) ~ 0.0018 < 0.005.
UNIFORM_WIN_INTERVAL = (0, 9)


def test_empty_config_gives_defaults(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("")
    cfg = parse_config(path)
    assert (cfg.lr, cfg.gamma, cfg.n_envs, cfg.target_sync) == (5e-4, 0.99, 8, 200)


def test_config_parsing_rules():
    cfg = parse_config_text("# comment\nalgorithm = coma  # trailing\nlambda=0.5\nenv.name = pursuit7\nenv.sight_radius = 3\n")
    assert cfg.algorithm == "coma" and cfg.lam == 0.5 and cfg.env_overrides == {"sight_radius": "3"}
    with pytest.raises(ConfigError, match="gamma"):
        parse_config_text("gamma = 1.5")
    with pytest.raises(ConfigError, match="'learning_rate'"):
        parse_config_text("learning_rate = 1")
    with pytest.raises(ConfigError, match=":2:"):
        parse_config_text("seed = 1\nthis line is wrong\n")
    with pytest.raises(ConfigError, match="bogus"):
        parse_config_text("env.bogus = 1")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config_text("seed = abc")


def test_config_format_roundtrip():
    cfg = TrainConfig(algorithm="iac", env_name="pursuit7", env_overrides={"episode_limit": "20"}, seed=4)
    back = parse_config_text(format_config(cfg))
    assert back.algorithm == "iac" and back.seed == 4 and back.env_overrides == {"episode_limit": "20"}


def test_optimal_policy_on_climb():
    rec = evaluate(TablePolicy([1.0, 0.0, 0.0]), MatrixGameSpec(), 32, seed=0)
    assert (rec.win_rate, rec.mean_return, rec.episode_len_mean) == (1.0, 11.0, 1.0)


def test_uniform_policy_win_count_in_binomial_interval():
    rec = evaluate(TablePolicy(np.ones(3) / 3), MatrixGameSpec(), 32, seed=11, explore=True)
    wins = round(rec.win_rate * 32)
    assert UNIFORM_WIN_INTERVAL[0] <= wins <= UNIFORM_WIN_INTERVAL[1]


def test_uniform_policy_win_rate_over_many_episodes():
    rec = evaluate(TablePolicy(np.ones(3) / 3), MatrixGameSpec(), 2000, seed=3, explore=True)
    assert rec.win_rate == pytest.approx(1 / 9, abs=0.03)


def test_evaluation_is_deterministic_and_side_effect_free():
    from vdac.envs import make_env
    from vdac.trainer import EnvInfo, Learner

    learner = Learner(TrainConfig(env_name="pursuit7", hidden_dim=8), EnvInfo.of(make_env("pursuit7")))
    before = learner.state_dict()
    spec = make_env("pursuit7").spec
    a = evaluate(learner.actor, spec, 8, seed=5)
    b = evaluate(learner.actor, spec, 8, seed=5)
    assert a == b
    for k, v in learner.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_eval_record_bounds():
    with pytest.raises(ValueError):
        EvalRecord(0, 1.5, 0.0, 1.0)


def _write_runs(tmp_path, columns):
    paths = []
    for i, rates in enumerate(columns):
        p = tmp_path / f"run{i}.csv"
        emit_csv([EvalRecord(t * 100, r, 10 * r, 5.0) for t, r in enumerate(rates)], p)
        paths.append(p)
    return paths


def test_aggregate_order_statistics(tmp_path):
    paths = _write_runs(tmp_path, [[0.0], [0.25], [0.5], [0.75], [1.0]])
    (row,) = aggregate_runs(paths)
    assert (row["win_rate"], row["win_rate_p25"], row["win_rate_p75"]) == (0.5, 0.25, 0.75)
    (same,) = aggregate_runs(_write_runs(tmp_path, [[0.3]] * 3))
    assert same["win_rate"] == same["win_rate_p25"] == same["win_rate_p75"] == 0.3


def test_even_count_median_is_lower_middle(tmp_path):
    (row,) = aggregate_runs(_write_runs(tmp_path, [[0.1], [0.2], [0.3], [0.4]]))
    assert row["win_rate"] == 0.2


@given(st.lists(st.floats(0, 1), min_size=1, max_size=15), st.sampled_from([25, 50, 75]))
def test_nearest_rank_matches_inverted_cdf(values, pct):
    assert nearest_rank(values, pct) == np.percentile(values, pct, method="inverted_cdf")


def test_aggregate_rejects_misaligned_grids(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    emit_csv([EvalRecord(0, 0.0, 0.0, 1.0), EvalRecord(100, 0.0, 0.0, 1.0)], a)
    emit_csv([EvalRecord(0, 0.0, 0.0, 1.0), EvalRecord(200, 0.0, 0.0, 1.0)], b)
    with pytest.raises(ValueError, match="grid"):
        aggregate_runs([a, b])
    with pytest.raises(ValueError):
        aggregate_runs([a])


def test_csv_schema_and_roundtrip(tmp_path):
    empty = tmp_path / "e.csv"
    emit_csv([], empty)
    assert empty.read_bytes() == b"t_env,win_rate,mean_return,episode_len_mean\n"
    recs = [EvalRecord(0, 1 / 3, -1.23456789, 7.5), EvalRecord(2000, 0.0, 11.0, 1.0)]
    path = tmp_path / "r.csv"
    emit_csv(recs, path)
    assert path.read_text().splitlines()[1] == "0,0.333333,-1.234568,7.500000"
    for a, b in zip(recs, read_eval_csv(path)):
        assert a.t_env == b.t_env
        assert abs(a.win_rate - b.win_rate) <= 1e-6 and abs(a.mean_return - b.mean_return) <= 1e-6
    agg = tmp_path / "agg.csv"
    emit_csv(aggregate_runs([path, path]), agg, AGG_COLUMNS)
    assert agg.read_text().splitlines()[0] == "t_env,win_rate,mean_return,episode_len_mean,win_rate_p25,win_rate_p75"


def test_run_directory_contents(tmp_path):
    cfg = TrainConfig(algorithm="vdac_sum", env_name="climb", t_max=200, eval_interval=64, eval_episodes=4,
                      hidden_dim=8)
    result = run_training(cfg, tmp_path / "run")
    out = tmp_path / "run"
    assert {p.name for p in out.iterdir()} == {"config.txt", "manifest.json", "stats.csv", "eval.csv", "checkpoint.bin"}
    assert [r.t_env for r in result.records] == [0, 64, 128, 192]
    assert result.t_env >= 200
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["eval_file"] == "eval.csv" and manifest["config"]["algorithm"] == "vdac_sum"
    assert {"code_version", "start_time", "stats_file"} <= set(manifest)
    stats = (out / "stats.csv").read_text().splitlines()
    assert stats[0].startswith("update,t_env,loss") and len(stats) == result.updates + 1
