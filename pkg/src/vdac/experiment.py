"""Experiment driver: config files, periodic greedy evaluation, run directories,
CSV learning curves and multi-seed aggregation."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .envs import env_spec_from_config, make_env
from .nn import load_checkpoint, save_checkpoint
from .seeding import ACTIONS, ENV, EVAL, derive_seed, generator
from .trainer import EnvInfo, Learner, TrainConfig, TrainStats, rollout

log = logging.getLogger(__name__)

EVAL_COLUMNS = ("t_env", "win_rate", "mean_return", "episode_len_mean")
AGG_COLUMNS = EVAL_COLUMNS + ("win_rate_p25", "win_rate_p75")

# config-file key -> TrainConfig field
_KEYS = {
    "algorithm": "algorithm",
    "env.name": "env_name",
    "gamma": "gamma",
    "lambda": "lam",
    "lr": "lr",
    "n_envs": "n_envs",
    "target_sync": "target_sync",
    "entropy_coef": "entropy_coef",
    "grad_clip": "grad_clip",
    "t_max": "t_max",
    "eval_interval": "eval_interval",
    "eval_episodes": "eval_episodes",
    "seed": "seed",
    "hidden_dim": "hidden_dim",
    "mixer_embed": "mixer_embed",
    "hypernet_hidden": "hypernet_hidden",
    "critic_hidden": "critic_hidden",
    "actor_coef": "actor_coef",
    "value_coef": "value_coef",
    "rms_decay": "rms_decay",
    "rms_eps": "rms_eps",
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config files


def parse_config_text(text: str, source: str = "<config>") -> TrainConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    overrides: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key.startswith("env.") and key != "env.name":
            overrides[key[4:]] = value
            continue
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        name = _KEYS[key]
        kind = types[name]
        try:
            if kind in ("int", int):
                values[name] = int(value)
            elif kind in ("float", float):
                values[name] = float(value)
            else:
                values[name] = value
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from exc
    try:
        config = TrainConfig(env_overrides=overrides, **values)
        env_spec_from_config(config.env_name, config.env_overrides)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return config


def parse_config(path) -> TrainConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def format_config(config: TrainConfig) -> str:
    inverse = {v: k for k, v in _KEYS.items()}
    lines = []
    for f in dataclasses.fields(TrainConfig):
        if f.name == "env_overrides":
            continue
        lines.append(f"{inverse[f.name]} = {getattr(config, f.name)}")
    for k, v in sorted(config.env_overrides.items()):
        lines.append(f"env.{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalRecord:
    t_env: int
    win_rate: float
    mean_return: float
    episode_len_mean: float

    def __post_init__(self):
        if not 0.0 <= self.win_rate <= 1.0:
            raise ValueError(f"win_rate must lie in [0, 1], got {self.win_rate}")


def evaluate(actor, env_spec, n_episodes: int = 32, seed: int = 0, explore: bool = False, t_env: int = 0) -> EvalRecord:
    """Run ``n_episodes`` fresh episodes in one batch; greedy unless ``explore``.

    Uses its own environments and generators, so nothing the training loop
    owns is touched.
    """
    envs = [make_env(env_spec, seed=derive_seed(seed, EVAL, i)) for i in range(n_episodes)]
    rngs = [generator(seed, EVAL, ACTIONS, i) for i in range(n_episodes)] if explore else None
    batch = rollout(actor, envs, rngs, greedy=not explore)
    return EvalRecord(
        t_env=int(t_env),
        win_rate=float(batch.won.mean()),
        mean_return=float(batch.returns.mean()),
        episode_len_mean=float(batch.lengths.mean()),
    )


# ---------------------------------------------------------------------------
# CSV


def emit_csv(records: Iterable, path, columns: Sequence[str] = EVAL_COLUMNS) -> None:
    """Write records (EvalRecord or dict rows) with six fractional digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for rec in records:
            row = rec if isinstance(rec, dict) else dataclasses.asdict(rec)
            cells = [str(int(row[c])) if c == "t_env" else f"{float(row[c]):.6f}" for c in columns]
            fh.write(",".join(cells) + "\n")


def read_eval_csv(path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EVAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [
            EvalRecord(int(r["t_env"]), float(r["win_rate"]), float(r["mean_return"]), float(r["episode_len_mean"]))
            for r in reader
        ]


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value (1-based)."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("percentile of an empty sequence")
    rank = max(1, math.ceil(pct / 100.0 * len(ordered) - 1e-12))
    return float(ordered[rank - 1])


def aggregate_runs(eval_files: Sequence) -> list[dict]:
    """Per-t_env median (lower middle) and nearest-rank 25/75 percentiles across runs."""
    if len(eval_files) < 2:
        raise ValueError("aggregation needs at least two runs")
    runs = [read_eval_csv(p) for p in eval_files]
    grid = [r.t_env for r in runs[0]]
    for path, run in zip(eval_files, runs):
        if [r.t_env for r in run] != grid:
            raise ValueError(f"{path}: t_env grid does not match {eval_files[0]}")
    rows = []
    for i, t in enumerate(grid):
        column = {c: [getattr(run[i], c) for run in runs] for c in EVAL_COLUMNS[1:]}
        row = {"t_env": t}
        for c, vals in column.items():
            row[c] = nearest_rank(vals, 50)
        row["win_rate_p25"] = nearest_rank(column["win_rate"], 25)
        row["win_rate_p75"] = nearest_rank(column["win_rate"], 75)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# training runs


@dataclass
class RunManifest:
    config: dict
    seed: int
    start_time: str
    code_version: str
    stats_file: str
    eval_file: str

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")


@dataclass
class RunResult:
    records: list[EvalRecord]
    learner: Learner
    t_env: int
    updates: int


_STAT_COLUMNS = ("update", "t_env", "loss", "policy_loss", "value_loss", "mean_advantage", "entropy",
                 "grad_norm_actor", "grad_norm_critic", "train_return", "train_win_rate")


def _env_for(config: TrainConfig):
    return env_spec_from_config(config.env_name, config.env_overrides)


def run_training(
    config: TrainConfig,
    out_dir=None,
    on_eval: Callable[[EvalRecord], None] | None = None,
) -> RunResult:
    """Train until ``t_max`` environment steps, evaluating on a fixed ``eval_interval`` grid.

    Evaluation records carry the grid point they were taken at, so every
    run with the same config shares the same ``t_env`` column.
    """
    spec = _env_for(config)
    envs = [make_env(spec, seed=derive_seed(config.seed, ENV, i)) for i in range(config.n_envs)]
    rngs = [generator(config.seed, ACTIONS, i) for i in range(config.n_envs)]
    learner = Learner(config, EnvInfo.of(envs[0]))
    eval_seed = derive_seed(config.seed, EVAL)

    stats_fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(config))
        RunManifest(
            config=config.to_dict(),
            seed=config.seed,
            start_time=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            code_version=__version__,
            stats_file="stats.csv",
            eval_file="eval.csv",
        ).write(out / "manifest.json")
        stats_fh = open(out / "stats.csv", "w", newline="")
        stats_fh.write(",".join(_STAT_COLUMNS) + "\n")

    records: list[EvalRecord] = []
    t_env, updates, next_eval = 0, 0, 0
    try:
        while True:
            if next_eval <= min(t_env, config.t_max):
                rec = evaluate(learner.actor, spec, config.eval_episodes, eval_seed)
                while next_eval <= min(t_env, config.t_max):
                    records.append(dataclasses.replace(rec, t_env=next_eval))
                    if on_eval:
                        on_eval(records[-1])
                    next_eval += config.eval_interval
            if t_env >= config.t_max:
                break
            batch = rollout(learner.actor, envs, rngs)
            t_env += batch.env_steps
            stats: TrainStats = learner.train_step(batch)
            updates += 1
            if stats_fh is not None:
                row = [updates, t_env, stats.loss, stats.policy_loss, stats.value_loss, stats.mean_advantage,
                       stats.entropy, stats.grad_norm.get("actor", 0.0), stats.grad_norm.get("critic", 0.0),
                       float(batch.returns.mean()), float(batch.won.mean())]
                stats_fh.write(",".join(str(v) if isinstance(v, int) else f"{v:.6g}" for v in row) + "\n")
    finally:
        if stats_fh is not None:
            stats_fh.close()

    if out_dir is not None:
        emit_csv(records, Path(out_dir) / "eval.csv")
        save_checkpoint(Path(out_dir) / "checkpoint.bin", learner.state_dict())
    return RunResult(records, learner, t_env, updates)


def load_learner(checkpoint, config: TrainConfig | None = None) -> Learner:
    """Rebuild a learner from a checkpoint; the config defaults to ``config.txt`` beside it."""
    checkpoint = Path(checkpoint)
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    if config is None:
        config = parse_config(checkpoint.parent / "config.txt")
    env = make_env(_env_for(config))
    learner = Learner(config, EnvInfo.of(env))
    learner.load_state_dict(load_checkpoint(checkpoint))
    return learner
