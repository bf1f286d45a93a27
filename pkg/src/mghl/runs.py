"""Experiment drivers: multi-seed training runs with on-disk artifacts,
the subgoal-set comparison protocol, and checkpoint evaluation.

Each training run writes, per seed, a self-contained artifact directory:
``config.ini`` (the effective configuration, re-parseable), ``metrics.csv``
(fixed-interval buckets), ``episodes.csv`` (raw per-episode rows),
``checkpoint.bin`` (final parameters, plus ``checkpoint_<step>.bin`` when a
checkpoint interval is set), and ``curve.svg``. The comparison protocol runs
a ladder of subgoal sets over the same seeds and summarizes median
steps-to-threshold per setting.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from .agent import build_agent
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import load_config, to_ini
from .envs import make_env
from .metrics import bucket_episode_rows, read_rows, write_episodes, \
    write_rows
from .svg import write_curves
from .trainer import train

# Scaled KeyDoor return with both rewards collected is 4.0; a trailing
# median at 3.9 therefore means the task is solved nearly every episode.
SOLVE_THRESHOLD = 3.9

# Subgoal-set ladder for the comparison protocol, smallest set first; the
# robustness variant appends a uniformly-resampled subgoal to the full set.
ABLATION_SETTINGS = (("pc",), ("pc", "fc"), ("pc", "fc", "dc"))
ROBUSTNESS_SETTING = ("pc", "fc", "dc", "rand")

SUMMARY_COLUMNS = ("setting", "seeds", "solved_seeds",
                   "median_steps_to_threshold", "median_final_return")

_RETURN_COLUMNS = ("ext_return_scaled", "int_return_pc", "int_return_dc",
                   "int_return_fc", "int_return_rand")


def _factories(rc, run_seed):
    """Build the agent/env factories for one seeded run. All actors share
    one environment layout (env seed offset by the run seed) so their
    gradients describe the same task instance."""
    enc = rc.encoder_config()
    env_seed = rc.env_seed + run_seed

    def env_factory(actor_index):
        return make_env(rc.env_name, size=rc.env_size,
                        step_limit=rc.env_step_limit, seed=env_seed)

    probe = env_factory(0)

    def agent_factory(rng):
        return build_agent(probe, rc.agent, enc, rc.hidden_units, rng)

    return agent_factory, env_factory


def _curve_series(metric_rows):
    """One (label, xs, ys) series per return column that has data."""
    series = []
    for col in _RETURN_COLUMNS:
        xs = [r["global_step"] for r in metric_rows if r.get(col) is not None]
        ys = [r[col] for r in metric_rows if r.get(col) is not None]
        if xs:
            series.append((col, xs, ys))
    return series


def _final_return(rows, window):
    if not rows:
        return None
    tail = [r["ext_return_scaled"] for r in rows[-window:]]
    return float(np.median(tail))


def train_one_seed(rc, seed, out_dir):
    """Train a single seed and write its artifact set into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    tcfg = dataclasses.replace(rc.trainer, seed=seed)
    effective = dataclasses.replace(rc, seeds=(seed,), trainer=tcfg,
                                    out_dir=out_dir)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(to_ini(effective))

    agent_factory, env_factory = _factories(rc, seed)
    ckpt_every = rc.checkpoint_interval or None

    def write_periodic(params, env_steps):
        save_checkpoint(params,
                        os.path.join(out_dir, f"checkpoint_{env_steps}.bin"))

    result = train(tcfg, agent_factory, env_factory,
                   checkpoint_every=ckpt_every,
                   checkpoint_fn=write_periodic if ckpt_every else None)

    write_episodes(os.path.join(out_dir, "episodes.csv"), result.rows)
    bucketed = bucket_episode_rows(result.rows, rc.metrics_interval,
                                   result.env_steps)
    write_rows(os.path.join(out_dir, "metrics.csv"), bucketed)
    save_checkpoint(result.final_params,
                    os.path.join(out_dir, "checkpoint.bin"))
    write_curves(os.path.join(out_dir, "curve.svg"), _curve_series(bucketed),
                 title=f"{rc.env_name} seed {seed}",
                 x_label="environment steps", y_label="return")
    return {
        "seed": seed,
        "out_dir": out_dir,
        "env_steps": result.env_steps,
        "episodes": result.episodes,
        "steps_to_threshold": result.steps_to_threshold,
        "stopped_early": result.stopped_early,
        "final_return": _final_return(result.rows, rc.trainer.stop_window),
        "wallclock_s": result.wallclock_s,
    }


def run_train(rc):
    """Train every seed in the config; returns one summary dict per seed.

    Artifacts land in ``out_dir/seed_<s>/``; the raw config text is copied
    verbatim to ``out_dir/config.source.ini`` and the effective
    configuration to ``out_dir/config.ini``.
    """
    os.makedirs(rc.out_dir, exist_ok=True)
    with open(os.path.join(rc.out_dir, "config.source.ini"), "w") as fh:
        fh.write(rc.source_text)
    with open(os.path.join(rc.out_dir, "config.ini"), "w") as fh:
        fh.write(to_ini(rc))
    return [train_one_seed(rc, seed, os.path.join(rc.out_dir, f"seed_{seed}"))
            for seed in rc.seeds]


def _setting_series(seed_dirs):
    """Mean extrinsic return across seeds at each metrics-bucket step."""
    by_step = {}
    for d in seed_dirs:
        _, rows = read_rows(os.path.join(d, "metrics.csv"))
        for row in rows:
            if row["ext_return_scaled"] is not None:
                by_step.setdefault(row["global_step"], []).append(
                    row["ext_return_scaled"])
    xs = sorted(by_step)
    return xs, [float(np.mean(by_step[x])) for x in xs]


def run_ablation(rc, robustness=False):
    """Run the subgoal-set ladder over the config's seed list.

    Every setting trains with early stopping at the solve threshold so the
    comparison statistic (median steps-to-threshold, censored at the step
    budget) is cheap to collect. Returns the summary table rows, which are
    also written to ``out_dir/summary.csv`` alongside ``combined.svg``
    (exactly one mean-across-seeds series per setting).
    """
    settings = list(ABLATION_SETTINGS)
    if robustness:
        settings.append(ROBUSTNESS_SETTING)
    threshold = rc.trainer.stop_at_return
    if threshold is None:
        threshold = SOLVE_THRESHOLD
    os.makedirs(rc.out_dir, exist_ok=True)
    with open(os.path.join(rc.out_dir, "config.source.ini"), "w") as fh:
        fh.write(rc.source_text)

    table, combined = [], []
    for kinds in settings:
        label = "+".join(kinds)
        sub = dataclasses.replace(
            rc,
            agent=dataclasses.replace(rc.agent, active_subgoals=tuple(kinds)),
            trainer=dataclasses.replace(rc.trainer, stop_at_return=threshold),
            out_dir=os.path.join(rc.out_dir, label))
        summaries = run_train(sub)
        steps = [s["steps_to_threshold"]
                 if s["steps_to_threshold"] is not None
                 else rc.trainer.total_steps for s in summaries]
        finals = [s["final_return"] for s in summaries
                  if s["final_return"] is not None]
        table.append({
            "setting": label,
            "seeds": len(summaries),
            "solved_seeds": sum(1 for s in summaries
                                if s["steps_to_threshold"] is not None),
            "median_steps_to_threshold": float(np.median(steps)),
            "median_final_return":
                float(np.median(finals)) if finals else None,
        })
        xs, ys = _setting_series([s["out_dir"] for s in summaries])
        if xs:
            combined.append((label, xs, ys))

    write_rows(os.path.join(rc.out_dir, "summary.csv"), table,
               SUMMARY_COLUMNS)
    write_curves(os.path.join(rc.out_dir, "combined.svg"), combined,
                 title=f"{rc.env_name}: subgoal-set comparison",
                 x_label="environment steps",
                 y_label="extrinsic return (mean over seeds)")
    return table


def evaluate_policy(env, select_action, episodes):
    """Roll out ``select_action(env, obs) -> action`` and report statistics.

    Returns a dict with mean/median return, success rate (when the
    environment exposes ``solved``), and episode lengths.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    has_solved = hasattr(type(env), "solved")
    returns, lengths, successes = [], [], []
    for _ in range(int(episodes)):
        obs = env.reset()
        total, steps, done = 0.0, 0, False
        while not done:
            out = env.step(select_action(env, obs))
            obs = out.obs
            total += out.scaled_ext_reward
            steps += 1
            done = out.done
        returns.append(total)
        lengths.append(steps)
        if has_solved:
            successes.append(float(env.solved))
    return {
        "episodes": int(episodes),
        "mean_return": float(np.mean(returns)),
        "median_return": float(np.median(returns)),
        "success_rate": float(np.mean(successes)) if has_solved else None,
        "mean_length": float(np.mean(lengths)),
        "returns": returns,
        "lengths": lengths,
    }


def evaluate_agent(env, agent, episodes):
    """Like evaluate_policy, but drives a full hierarchical agent (which
    manages its own recurrent state and subgoal refresh)."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    has_solved = hasattr(type(env), "solved")
    returns, lengths, successes = [], [], []
    for _ in range(int(episodes)):
        agent.begin_episode(env.reset())
        total, steps, done = 0.0, 0, False
        while not done:
            tr = agent.step(env)
            total += tr.scaled_ext_reward
            steps += 1
            done = tr.done
        returns.append(total)
        lengths.append(steps)
        if has_solved:
            successes.append(float(env.solved))
    return {
        "episodes": int(episodes),
        "mean_return": float(np.mean(returns)),
        "median_return": float(np.median(returns)),
        "success_rate": float(np.mean(successes)) if has_solved else None,
        "mean_length": float(np.mean(lengths)),
        "returns": returns,
        "lengths": lengths,
    }


def run_eval(checkpoint_path, episodes):
    """Greedy-mode rollouts of a trained checkpoint.

    The agent is rebuilt from the ``config.ini`` colocated with the
    checkpoint, so evaluation sees the same environment instance the run
    trained on.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    store = load_checkpoint(checkpoint_path)
    cfg_path = os.path.join(
        os.path.dirname(os.path.abspath(checkpoint_path)), "config.ini")
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(
            f"no config.ini next to {checkpoint_path}; cannot rebuild "
            f"the agent that produced it")
    rc = load_config(cfg_path)
    seed = rc.seeds[0]
    env = make_env(rc.env_name, size=rc.env_size,
                   step_limit=rc.env_step_limit, seed=rc.env_seed + seed)
    agent = build_agent(env, rc.agent, rc.encoder_config(), rc.hidden_units,
                        np.random.default_rng(seed), greedy=True)
    snapshot = store.snapshot()
    try:
        agent.reload_worker(snapshot)
        for kind in agent.manager.policies:
            agent.reload_goal_policy(kind, snapshot)
    except KeyError as exc:
        raise CheckpointError(
            f"checkpoint is missing parameter {exc.args[0]!r}; it does not "
            f"match the configuration next to it") from exc
    report = evaluate_agent(env, agent, episodes)
    report["checkpoint"] = os.path.abspath(checkpoint_path)
    report["env"] = rc.env_name
    return report
