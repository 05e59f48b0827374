"""Training/evaluation orchestration, metrics, and run persistence.

run_train alternates 2048-step rollouts (weights resolved per tick by the
hint scheduler) with PPO updates, writing a learning-curve CSV, the
weight-stream CSV, and a final checkpoint. run_eval replays a checkpoint
deterministically (Beta mean actions), writes one CSV row plus a (tick,
speed, accel) trace per episode, and an aggregate JSON that conforms to the
schema shipped in hintdrive/data/eval_summary.schema.json.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import anchor, cache, hinter, policy, semantics
from .driveworld import DT, DEFAULT_GOAL_X, Action, Density, DriveWorld, Scenario, Terminal

log = logging.getLogger(__name__)

HINT_MODES = ("mock", "faulty:nan", "faulty:negative", "faulty:overscale", "faulty:timeout", "remote", "none-uniform")
LEARNING_CURVE_HEADER = ("episode", "return", "trailing_sr_100")
WEIGHT_STREAM_HEADER = ("tick", "source", "lambda_safety", "lambda_efficiency", "lambda_comfort")
EPISODE_CSV_HEADER = (
    "episode",
    "seed",
    "outcome",
    "success",
    "collision",
    "avg_speed",
    "total_distance",
    "time_steps",
    "speed_variance",
    "accel_variance",
)
TRACE_HEADER = ("tick", "speed", "accel")


@dataclass
class RunConfig:
    mode: str
    scenario: str = "overtaking"
    density: str = "low"
    seed: int = 0
    total_steps: int = 200_000
    episodes: int = 100
    hint_mode: str = "mock"
    output_dir: Path = Path("runs/out")
    checkpoint: Path | None = None
    corpus: Path | None = None
    sync_test_mode: bool = False
    goal_x: float = DEFAULT_GOAL_X

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {self.mode!r}")
        Scenario(self.scenario)
        Density(self.density)
        if self.hint_mode not in HINT_MODES:
            raise ValueError(f"hint_mode must be one of {HINT_MODES}, got {self.hint_mode!r}")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if self.episodes <= 0:
            raise ValueError("episodes must be positive")
        if self.mode == "eval" and self.checkpoint is None:
            raise ValueError("eval mode requires a checkpoint")
        self.output_dir = Path(self.output_dir)
        if self.checkpoint is not None:
            self.checkpoint = Path(self.checkpoint)
        if self.corpus is not None:
            self.corpus = Path(self.corpus)


_CONFIG_KEYS = {
    "scenario": str,
    "density": str,
    "seed": int,
    "steps": int,
    "episodes": int,
    "hint_mode": str,
    "out": str,
    "checkpoint": str,
    "corpus": str,
    "sync_test_mode": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "goal_x": float,
}


def parse_config_file(path) -> dict:
    """Flat `key = value` file with # comments; unknown keys are rejected."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {line.rstrip()!r}")
            key, _, raw = text.partition("=")
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _CONFIG_KEYS[key](raw.strip())
    return values


def episode_seed(base_seed: int, index: int) -> int:
    """Deterministic per-episode seed stream."""
    return (base_seed * 2654435761 + 0x9E3779B9 * index) % (2**63)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class EpisodeMetrics:
    success: bool
    collision: bool
    avg_speed: float
    total_distance: float
    time_steps: float
    speed_variance: float
    accel_variance: float


def compute_metrics(trace, outcome: Terminal) -> EpisodeMetrics:
    """Aggregate a per-tick (speed, accel) trace into episode metrics."""
    arr = np.asarray(trace, dtype=float)
    if arr.size == 0:
        raise ValueError("empty trace")
    speeds, accels = arr[:, 0], arr[:, 1]
    return EpisodeMetrics(
        success=outcome is Terminal.GOAL_REACHED,
        collision=outcome is Terminal.COLLISION,
        avg_speed=float(speeds.mean()),
        total_distance=float(speeds.sum() * DT),
        time_steps=float(len(speeds) * DT),
        speed_variance=float(speeds.var()),
        accel_variance=float(accels.var()),
    )


# ---------------------------------------------------------------------------
# shared episode driver


@dataclass
class EpisodeResult:
    outcome: Terminal
    steps: int
    trace: list = field(default_factory=list)  # (tick, speed, accel) rows
    weighted_rewards: list = field(default_factory=list)
    sources: list = field(default_factory=list)


def run_episode(
    env: DriveWorld,
    params: policy.NetParams,
    *,
    scenario: str,
    density: str,
    seed: int,
    rng: np.random.Generator | None = None,
    scheduler: cache.HintScheduler | None = None,
    deterministic: bool = False,
    start_tick: int = 0,
) -> EpisodeResult:
    """Roll a single episode to termination (no learning)."""
    snap = env.reset(scenario, density, seed)
    state, digest = semantics.encode_all(snap)
    result = EpisodeResult(outcome=Terminal.NONE, steps=0)
    tick = start_tick
    while True:
        weights = None
        if scheduler is not None:
            source = scheduler.current_weights(tick, digest)
            weights = source.weights
            result.sources.append(source.source)
        alpha, beta = policy.actor_forward(params, state.vector)
        if deterministic:
            action_vec = policy.mean_action(alpha, beta)
        else:
            action_vec, _ = policy.sample_action(alpha, beta, rng)
        out = env.step(Action(float(action_vec[0]), float(action_vec[1])))
        result.steps += 1
        tick += 1
        result.trace.append((out.snapshot.tick, out.snapshot.ego.speed, out.snapshot.ego.accel))
        if weights is not None:
            result.weighted_rewards.append(float(weights @ out.rewards.as_array()))
        if out.terminal is not Terminal.NONE:
            result.outcome = out.terminal
            return result
        state, digest = semantics.encode_all(out.snapshot)


# ---------------------------------------------------------------------------
# training


def _load_corpus(cfg: RunConfig):
    return anchor.load_corpus(cfg.corpus) if cfg.corpus else anchor.default_corpus()


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def run_train(cfg: RunConfig) -> dict:
    """Train until total_steps; returns the machine-readable summary."""
    if cfg.mode != "train":
        raise ValueError("run_train requires a train-mode config")
    out_dir = cfg.output_dir
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / ".write_probe").write_text("")
        (out_dir / ".write_probe").unlink()
    except OSError as exc:
        raise RuntimeError(f"output directory {out_dir} is not writable: {exc}") from exc

    corpus = _load_corpus(cfg)
    provider = hinter.make_provider(cfg.hint_mode)
    scheduler = cache.HintScheduler(
        provider,
        corpus,
        scenario=cfg.scenario,
        density=cfg.density,
        sync_mode=cfg.sync_test_mode,
    )

    params = policy.init_params(np.random.default_rng(np.random.SeedSequence([cfg.seed, 0])))
    opt = policy.AdamState(params)
    rng_actions = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    rng_update = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    log.info("initialized %d parameters (seed %d)", params.parameter_count(), cfg.seed)

    env = DriveWorld(goal_x=cfg.goal_x)
    episode_index = 0
    snap = env.reset(cfg.scenario, cfg.density, episode_seed(cfg.seed, episode_index))
    state, digest = semantics.encode_all(snap)

    curve_rows = []
    trailing_success: list[bool] = []
    trailing_returns: list[float] = []
    baseline_returns: list[float] = []
    episode_rewards: list[float] = []
    steps_done = 0
    updates = 0
    global_tick = 0
    started = time.monotonic()

    while steps_done < cfg.total_steps:
        buffer = policy.RolloutBuffer()
        for _ in range(policy.ROLLOUT_STEPS):
            source = scheduler.current_weights(global_tick, digest)
            alpha, beta = policy.actor_forward(params, state.vector)
            action_vec, log_prob = policy.sample_action(alpha, beta, rng_actions)
            out = env.step(Action(float(action_vec[0]), float(action_vec[1])))
            reward_arr = out.rewards.as_array()
            done = out.terminal is not Terminal.NONE
            buffer.add(state.vector, action_vec, log_prob, reward_arr, done, source.weights)
            episode_rewards.append(float(source.weights @ reward_arr))
            global_tick += 1
            if done:
                ep_return = policy.eq1_return(episode_rewards)
                success = out.terminal is Terminal.GOAL_REACHED
                trailing_success.append(success)
                trailing_returns.append(ep_return)
                del trailing_success[:-100], trailing_returns[:-100]
                if updates == 0:
                    baseline_returns.append(ep_return)
                sr = sum(trailing_success) / len(trailing_success)
                curve_rows.append((episode_index, repr(ep_return), repr(sr)))
                episode_rewards = []
                episode_index += 1
                snap = env.reset(cfg.scenario, cfg.density, episode_seed(cfg.seed, episode_index))
                state, digest = semantics.encode_all(snap)
            else:
                state, digest = semantics.encode_all(out.snapshot)

        values = policy.critic_values(params, np.asarray(buffer.states))
        bootstrap = policy.critic_values(params, state.vector)[0]
        batch = buffer.to_batch(values, bootstrap)
        advantages, targets = policy.compute_gae(
            batch.rewards, batch.values, batch.bootstrap_value, batch.dones
        )
        _, adv_std = policy.integrate(advantages, batch.weights)
        stats = policy.ppo_update(params, opt, batch, adv_std, targets, rng_update)
        steps_done += policy.ROLLOUT_STEPS
        updates += 1
        log.info(
            "update %d: steps=%d episodes=%d ratio=%.4f clip=%.3f entropy=%.3f",
            updates,
            steps_done,
            episode_index,
            stats["mean_ratio"],
            stats["clip_fraction"],
            stats["entropy"],
        )

    scheduler.close()
    _write_csv(out_dir / "learning_curve.csv", LEARNING_CURVE_HEADER, curve_rows)
    _write_csv(
        out_dir / "weights_stream.csv",
        WEIGHT_STREAM_HEADER,
        [(t, s, repr(a), repr(b), repr(c)) for t, s, a, b, c in scheduler.rows],
    )
    checkpoint_path = out_dir / "checkpoint.bin"
    policy.save_checkpoint(checkpoint_path, params)

    final_sr = (sum(trailing_success) / len(trailing_success)) if trailing_success else 0.0
    summary = {
        "mode": "train",
        "scenario": cfg.scenario,
        "density": cfg.density,
        "seed": cfg.seed,
        "hint_mode": cfg.hint_mode,
        "total_steps": steps_done,
        "updates": updates,
        "episodes": episode_index,
        "final_trailing_sr": final_sr,
        "mean_return": (sum(trailing_returns) / len(trailing_returns)) if trailing_returns else 0.0,
        "baseline_return": (sum(baseline_returns) / len(baseline_returns)) if baseline_returns else 0.0,
        "checkpoint": str(checkpoint_path),
        "wall_seconds": time.monotonic() - started,
    }
    with open(out_dir / "train_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary


# ---------------------------------------------------------------------------
# evaluation


def run_eval(cfg: RunConfig) -> dict:
    """Deterministic checkpoint evaluation; returns the aggregate summary."""
    if cfg.mode != "eval":
        raise ValueError("run_eval requires an eval-mode config")
    params = policy.load_checkpoint(cfg.checkpoint)
    in_dim = params.actor[0][0].shape[0]
    if in_dim != semantics.STATE_DIM:
        raise policy.CheckpointError(
            f"checkpoint expects {in_dim}-dim states, encoder produces {semantics.STATE_DIM}"
        )
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(exist_ok=True)

    env = DriveWorld(goal_x=cfg.goal_x)
    rows = []
    metrics_list: list[EpisodeMetrics] = []
    outcomes: list[Terminal] = []
    for ep in range(cfg.episodes):
        seed = episode_seed(cfg.seed, ep)
        result = run_episode(
            env,
            params,
            scenario=cfg.scenario,
            density=cfg.density,
            seed=seed,
            deterministic=True,
        )
        metrics = compute_metrics([(s, a) for _, s, a in result.trace], result.outcome)
        metrics_list.append(metrics)
        outcomes.append(result.outcome)
        rows.append(
            (
                ep,
                seed,
                result.outcome.value,
                int(metrics.success),
                int(metrics.collision),
                repr(metrics.avg_speed),
                repr(metrics.total_distance),
                repr(metrics.time_steps),
                repr(metrics.speed_variance),
                repr(metrics.accel_variance),
            )
        )
        _write_csv(
            traces_dir / f"ep_{ep:04d}.csv",
            TRACE_HEADER,
            [(t, repr(s), repr(a)) for t, s, a in result.trace],
        )

    _write_csv(out_dir / "episodes.csv", EPISODE_CSV_HEADER, rows)
    n = len(metrics_list)
    summary = {
        "scenario": cfg.scenario,
        "density": cfg.density,
        "seed": cfg.seed,
        "episodes": n,
        "sr_pct": 100.0 * sum(m.success for m in metrics_list) / n,
        "cr_pct": 100.0 * sum(m.collision for m in metrics_list) / n,
        "timeout_pct": 100.0 * sum(o is Terminal.TIMEOUT for o in outcomes) / n,
        "offroad_pct": 100.0 * sum(o is Terminal.OFF_ROAD for o in outcomes) / n,
        "avg_speed_mean": sum(m.avg_speed for m in metrics_list) / n,
        "total_distance_mean": sum(m.total_distance for m in metrics_list) / n,
        "time_steps_mean": sum(m.time_steps for m in metrics_list) / n,
        "speed_variance_mean": sum(m.speed_variance for m in metrics_list) / n,
        "accel_variance_mean": sum(m.accel_variance for m in metrics_list) / n,
    }
    with open(out_dir / "eval_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary
