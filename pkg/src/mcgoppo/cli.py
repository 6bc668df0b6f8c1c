"""Command line: train a run, evaluate a checkpoint, sweep an ablation grid.

Every artifact a run produces (metrics.csv, checkpoints, the frozen
config copy) is reproducible byte for byte from the same config and
seed, so the wallclock column stays zero unless timing is requested.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import yaml

from .config import (
    _FIELD_NAMES,
    ConfigError,
    RunConfig,
    deep_update,
    dump_config,
    load_config,
    load_raw,
    make_run_config,
)
from .envs import EnvSpec, make_env
from .nn_core import Adam, CheckpointError, load_checkpoint, load_params, save_params
from .policy import MultiAgentPolicy
from .ppo import UpdateDiagnostics, update
from .rollout import RolloutWorker

METRIC_COLUMNS = (
    "step",
    "mean_episode_reward",
    "success_rate",
    "actor_loss",
    "critic_loss",
    "entropy",
    "clip_fraction",
    "wallclock_s",
)


def build_policy(cfg: RunConfig, spec: EnvSpec, rng: np.random.Generator) -> MultiAgentPolicy:
    return MultiAgentPolicy(
        cfg.policy_settings(),
        spec.obs_dim,
        spec.n_actions,
        spec.n_agents,
        spec.state_layout,
        rng,
    )


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _write_diagnostics(out: Path, step: int, reason: str, diag: UpdateDiagnostics | None) -> Path:
    payload = {"step": step, "reason": reason}
    if diag is not None:
        payload.update(
            actor_losses=diag.actor_losses,
            critic_losses=diag.critic_losses,
            mean_ratios=diag.mean_ratios,
            aborted=diag.aborted,
        )
    path = out / "diagnostics.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# train


def run_training(cfg: RunConfig) -> Path:
    """Collect/update until total_steps; artifacts land in cfg.out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")

    envs = [make_env(cfg.env, **cfg.env_kwargs) for _ in range(cfg.n_envs)]
    spec = envs[0].spec
    # one run seed, fanned out into independent streams
    init_seed, rollout_seed, update_seed = (
        int(child.generate_state(1)[0])
        for child in np.random.SeedSequence(cfg.seed).spawn(3)
    )
    policy = build_policy(cfg, spec, np.random.default_rng(init_seed))
    train_cfg = cfg.train_config(spec.n_agents)
    worker = RolloutWorker(envs, policy, cfg.rollout_config(), seed=rollout_seed)
    actor_opt = Adam(policy.actor_side_parameters(), lr=cfg.lr)
    critic_opt = Adam(policy.critic_side_parameters(), lr=cfg.lr)
    update_rng = np.random.default_rng(update_seed)

    meta = {"config": cfg.to_dict()}
    save_params(out / "checkpoint_init.mck", policy.parameters(), {**meta, "step": 0})

    n_updates = math.ceil(cfg.total_steps / cfg.batch_size)
    start = time.perf_counter()
    step = 0
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for upd in range(1, n_updates + 1):
            try:
                batch = worker.collect(train_cfg)
            except RuntimeError as exc:
                path = _write_diagnostics(out, step, str(exc), None)
                raise RuntimeError(f"training aborted: {exc} (diagnostics in {path})") from exc
            diag = update(policy, batch, train_cfg, actor_opt, critic_opt, update_rng)
            step += cfg.batch_size
            if diag.aborted:
                path = _write_diagnostics(out, step, "non-finite loss or gradient", diag)
                raise RuntimeError(
                    f"training aborted at step {step}: non-finite loss or gradient "
                    f"(diagnostics in {path})"
                )
            if upd % cfg.log_every == 0 or upd == n_updates:
                stats = worker.stats.drain()
                reward = float(np.mean(stats.rewards)) if len(stats) else float("nan")
                success = float(np.mean(stats.successes)) if len(stats) else float("nan")
                wallclock = time.perf_counter() - start if cfg.timing else 0.0
                writer.writerow(
                    [
                        str(step),
                        _fmt(reward),
                        _fmt(success),
                        _fmt(diag.last("actor_losses")),
                        _fmt(diag.last("critic_losses")),
                        _fmt(diag.last("entropies")),
                        _fmt(diag.last("clip_fractions")),
                        f"{wallclock:.6f}",
                    ]
                )
            if cfg.checkpoint_every and upd % cfg.checkpoint_every == 0 and upd != n_updates:
                save_params(
                    out / f"checkpoint_{step:09d}.mck", policy.parameters(), {**meta, "step": step}
                )
    save_params(out / "checkpoint_final.mck", policy.parameters(), {**meta, "step": step})
    return out


# ---------------------------------------------------------------------------
# evaluate


def run_evaluation(
    checkpoint: str | Path,
    env_name: str | None = None,
    episodes: int = 100,
    seed: int = 0,
) -> dict:
    """Greedy (argmax) policy for `episodes` episodes; deterministic given seed."""
    meta, _ = load_checkpoint(checkpoint)
    try:
        cfg = RunConfig(**meta["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{checkpoint}: no usable run config in header") from exc
    name = env_name or cfg.env
    env = make_env(name, **(cfg.env_kwargs if name == cfg.env else {}))
    policy = build_policy(cfg, env.spec, np.random.default_rng(0))
    load_params(checkpoint, policy.parameters())

    if episodes == 0:
        return {"episodes": 0}
    rng = np.random.default_rng(seed)  # unused by argmax actions, kept for the API
    rewards, lengths, successes = [], [], []
    for child in np.random.SeedSequence(seed).spawn(episodes):
        result = env.reset(seed=int(child.generate_state(1)[0]))
        total, length = 0.0, 0
        while not result.done:
            actions, _ = policy.act(result.obs[None], result.masks[None], rng, greedy=True)
            result = env.step(actions[0])
            total += float(result.rewards[0])
            length += 1
        rewards.append(total)
        lengths.append(length)
        successes.append(result.success)
    return {
        "episodes": episodes,
        "mean_reward": float(np.mean(rewards)),
        "success_rate": float(np.mean(successes)),
        "mean_length": float(np.mean(lengths)),
    }


# ---------------------------------------------------------------------------
# ablate


COMPARISON_COLUMNS = (
    "cell",
    "seed",
    "status",
    "mean_reward",
    "success_rate",
    "mean_length",
    "reward_mean",
    "reward_std",
    "success_mean",
    "success_std",
)


def _cell_name(cell: dict) -> str:
    explicit = cell.get("name")
    if explicit:
        raw = str(explicit)
    elif len(cell) == 0:
        raw = "base"
    else:
        raw = "+".join(f"{k}={cell[k]}" for k in sorted(cell) if k != "name") or "base"
    return re.sub(r"[^A-Za-z0-9_.=+-]+", "_", raw)


def _resolve_grid(base_raw: dict, grid: dict) -> tuple[list[tuple[str, dict]], list[int], int]:
    """Validate the whole grid up front; nothing trains if any cell is bad."""
    if not isinstance(grid, dict):
        raise ConfigError("grid file: top level must be a mapping")
    cells = grid.get("cells")
    seeds = grid.get("seeds")
    if not isinstance(cells, list) or not cells:
        raise ConfigError("grid needs a non-empty `cells` list")
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("grid needs a non-empty `seeds` list")
    seeds = [int(s) for s in seeds]
    episodes = int(grid.get("episodes", 100))
    extra = sorted(set(grid) - {"cells", "seeds", "episodes"})
    if extra:
        raise ConfigError(f"unknown grid keys: {', '.join(extra)}")

    resolved: list[tuple[str, dict]] = []
    seen: dict[str, str] = {}
    for cell in cells:
        if not isinstance(cell, dict):
            raise ConfigError(f"grid cell must be a mapping, got {cell!r}")
        unknown = sorted(set(cell) - _FIELD_NAMES - {"name"})
        if unknown:
            raise ConfigError(f"grid cell uses unknown toggles: {', '.join(unknown)}")
        raw = deep_update(dict(base_raw), {k: v for k, v in cell.items() if k != "name"})
        probe = make_run_config({**raw, "seed": 0, "out_dir": "probe"})
        key = json.dumps(
            {k: v for k, v in probe.to_dict().items() if k not in ("seed", "out_dir")},
            sort_keys=True,
        )
        name = _cell_name(cell)
        if key in seen:
            warnings.warn(f"duplicate ablation cell {name!r} matches {seen[key]!r}; skipped")
            continue
        seen[key] = name
        resolved.append((name, raw))
    return resolved, seeds, episodes


def run_ablation(base_raw: dict, grid: dict) -> Path:
    """Train each cell x seed, evaluate, and write one comparison CSV."""
    resolved, seeds, episodes = _resolve_grid(base_raw, grid)
    out = Path(base_raw.get("out_dir", "runs/ablation"))
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for name, raw in resolved:
        cell_rows = []
        for seed in seeds:
            cell_out = out / "cells" / name / f"seed{seed}"
            row = {"cell": name, "seed": seed}
            try:
                cfg = make_run_config({**raw, "seed": seed, "out_dir": str(cell_out)})
                run_training(cfg)
                summary = run_evaluation(
                    cell_out / "checkpoint_final.mck", episodes=episodes, seed=seed
                )
                row.update(
                    status="ok",
                    mean_reward=summary["mean_reward"],
                    success_rate=summary["success_rate"],
                    mean_length=summary["mean_length"],
                )
            except Exception as exc:  # noqa: BLE001 -- record the failure, keep sweeping
                row["status"] = f"failed: {exc}"
            cell_rows.append(row)
        good = [r for r in cell_rows if r["status"] == "ok"]
        if good:
            rewards = np.array([r["mean_reward"] for r in good])
            successes = np.array([r["success_rate"] for r in good])
            for r in cell_rows:
                r.update(
                    reward_mean=float(rewards.mean()),
                    reward_std=float(rewards.std()),
                    success_mean=float(successes.mean()),
                    success_std=float(successes.std()),
                )
        rows.extend(cell_rows)

    table = out / "comparison.csv"
    with open(table, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    _fmt(row[col]) if isinstance(row.get(col), float) else str(row.get(col, ""))
                    for col in COMPARISON_COLUMNS
                ]
            )
    return table


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcgoppo",
        description="Multi-agent PPO with scheduled communication: train, evaluate, ablate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one run from a config file")
    train.add_argument("--config", type=Path, default=None, help="YAML run config")
    train.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable; dotted keys reach into mappings)",
    )

    ev = sub.add_parser("evaluate", help="roll out a checkpoint greedily")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--env", default=None, help="environment name (default: from checkpoint)")
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0)

    ab = sub.add_parser("ablate", help="train and compare a grid of configurations")
    ab.add_argument("--config", type=Path, default=None, help="base YAML run config")
    ab.add_argument("--grid", type=Path, required=True, help="YAML grid: cells, seeds, episodes")
    ab.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = load_config(args.config, args.overrides)
            out = run_training(cfg)
            print(f"run artifacts in {out}")
        elif args.command == "evaluate":
            summary = run_evaluation(args.checkpoint, args.env, args.episodes, args.seed)
            for key, value in summary.items():
                print(f"{key}: {_fmt(value) if isinstance(value, float) else value}")
        else:
            base_raw = load_raw(args.config, args.overrides)
            grid = yaml.safe_load(Path(args.grid).read_text(encoding="utf-8"))
            table = run_ablation(base_raw, grid)
            print(f"comparison table in {table}")
    except (ConfigError, CheckpointError, FileNotFoundError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
