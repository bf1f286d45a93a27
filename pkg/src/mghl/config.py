"""Run configuration: a human-readable INI file with sections [run], [env],
[agent], [weights], and [trainer]; every key has a default so sparse files
work. Validation failures name the offending field as section.key. The
effective configuration can be re-serialized canonically for provenance
snapshots next to run artifacts.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .agent import AgentConfig
from .envs import ENV_NAMES
from .nets import EncoderConfig
from .rewards import KIND_ORDER, RewardWeights
from .trainer import TrainerConfig


class ConfigError(Exception):
    """Invalid configuration; the message starts with the section.key path."""


@dataclass(frozen=True)
class RunConfig:
    env_name: str
    env_size: int
    env_step_limit: int
    env_seed: int
    agent: AgentConfig
    conv_specs: tuple
    fc_units: int
    hidden_units: int
    trainer: TrainerConfig
    seeds: tuple
    out_dir: str
    metrics_interval: int
    checkpoint_interval: int
    # Raw text the config was parsed from (provenance only, not identity).
    source_text: str = dataclasses.field(default="", compare=False)

    def encoder_config(self):
        return EncoderConfig(conv_specs=self.conv_specs,
                             fc_units=self.fc_units,
                             input_shape=(3, self.env_size, self.env_size))


DEFAULTS = {
    "run": {
        "out_dir": "runs/out",
        "seeds": "0",
        "metrics_interval": "1000",
        "checkpoint_interval": "0",
    },
    "env": {
        "name": "keydoor",
        "size": "12",
        "step_limit": "300",
        "seed": "0",
    },
    "agent": {
        "subgoals": "pc,dc,fc",
        "refresh": "1",
        "hidden_units": "64",
        "bptt_manager": "20",
        "bptt_worker": "100",
        "gamma": "0.99",
        "block_size": "4",
        "conv": "8:3:1,16:3:2",
        "fc_units": "64",
    },
    "weights": {
        "eta": "0.05",
        "dc_unit": "0.01",
        "alpha": "0.8",
    },
    "trainer": {
        "total_steps": "2000000",
        "num_actors": "8",
        "lr": "7e-4",
        "lr_decay": "true",
        "entropy_coef": "0.01",
        "value_coef": "0.5",
        "clip_norm": "40",
        "rmsprop_decay": "0.99",
        "rmsprop_eps": "1e-8",
        "stop_at_return": "",
        "stop_window": "20",
    },
}


def _raw(parser, section, key):
    if parser.has_option(section, key):
        return parser.get(section, key)
    return DEFAULTS[section][key]


def _parse_scalar(parser, section, key, cast, what):
    raw = _raw(parser, section, key)
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key} must be {what}, got {raw!r}")


def _int(parser, section, key):
    return _parse_scalar(parser, section, key, int, "an integer")


def _float(parser, section, key):
    return _parse_scalar(parser, section, key, float, "a number")


def _bool(parser, section, key):
    raw = _raw(parser, section, key).strip().lower()
    if raw in ("true", "yes", "1", "on"):
        return True
    if raw in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{section}.{key} must be a boolean, got {raw!r}")


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field} {message}")


def _parse_conv(raw):
    raw = raw.strip()
    if not raw:
        return ()
    specs = []
    for part in raw.split(","):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ConfigError(
                f"agent.conv entries must be filters:kernel:stride, "
                f"got {part.strip()!r}")
        try:
            specs.append(tuple(int(b) for b in bits))
        except ValueError:
            raise ConfigError(f"agent.conv has a non-integer field in "
                              f"{part.strip()!r}")
    return tuple(specs)


def parse_config(text):
    """Parse INI text into a validated RunConfig."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config is not valid INI: {exc}") from exc
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{section} is not a known section "
                              f"(expected one of {sorted(DEFAULTS)})")
        for key in parser.options(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{section}.{key} is not a known key")

    env_name = _raw(parser, "env", "name").strip()
    _require(env_name in ENV_NAMES, "env.name",
             f"unknown environment {env_name!r} (expected one of "
             f"{sorted(ENV_NAMES)})")
    env_size = _int(parser, "env", "size")
    _require(env_size >= 6, "env.size", f"out of range (>= 6): got {env_size}")
    step_limit = _int(parser, "env", "step_limit")
    _require(step_limit >= 1, "env.step_limit",
             f"out of range (>= 1): got {step_limit}")
    env_seed = _int(parser, "env", "seed")

    eta = _float(parser, "weights", "eta")
    _require(eta > 0, "weights.eta", f"out of range (> 0): got {eta}")
    dc_unit = _float(parser, "weights", "dc_unit")
    _require(dc_unit > 0, "weights.dc_unit",
             f"out of range (> 0): got {dc_unit}")
    alpha = _float(parser, "weights", "alpha")
    _require(0.0 <= alpha <= 1.0, "weights.alpha",
             f"out of range [0, 1]: got {alpha}")
    weights = RewardWeights(eta=eta, dc_unit=dc_unit, alpha=alpha)

    subgoals = tuple(s.strip() for s in
                     _raw(parser, "agent", "subgoals").split(",") if s.strip())
    for kind in subgoals:
        _require(kind in KIND_ORDER, "agent.subgoals",
                 f"has unknown kind {kind!r} (valid: {', '.join(KIND_ORDER)})")
    _require(len(subgoals) > 0, "agent.subgoals", "must list at least one kind")
    refresh = _int(parser, "agent", "refresh")
    _require(refresh >= 1, "agent.refresh",
             f"out of range (>= 1): got {refresh}")
    hidden_units = _int(parser, "agent", "hidden_units")
    _require(hidden_units >= 1, "agent.hidden_units",
             f"out of range (>= 1): got {hidden_units}")
    bptt_manager = _int(parser, "agent", "bptt_manager")
    bptt_worker = _int(parser, "agent", "bptt_worker")
    _require(bptt_manager >= 1, "agent.bptt_manager",
             f"out of range (>= 1): got {bptt_manager}")
    _require(bptt_worker >= 1, "agent.bptt_worker",
             f"out of range (>= 1): got {bptt_worker}")
    gamma = _float(parser, "agent", "gamma")
    _require(0.0 < gamma <= 1.0, "agent.gamma",
             f"out of range (0, 1]: got {gamma}")
    block_size = _int(parser, "agent", "block_size")
    _require(block_size >= 1, "agent.block_size",
             f"out of range (>= 1): got {block_size}")
    _require(env_size % block_size == 0, "agent.block_size",
             f"{block_size} does not tile a {env_size}x{env_size} observation")
    conv_specs = _parse_conv(_raw(parser, "agent", "conv"))
    fc_units = _int(parser, "agent", "fc_units")
    _require(fc_units >= 1, "agent.fc_units",
             f"out of range (>= 1): got {fc_units}")
    agent = AgentConfig(active_subgoals=subgoals,
                        subgoal_refresh_interval=refresh, weights=weights,
                        bptt_manager=bptt_manager, bptt_worker=bptt_worker,
                        gamma=gamma, block_size=block_size)

    total_steps = _int(parser, "trainer", "total_steps")
    _require(total_steps >= 1, "trainer.total_steps",
             f"out of range (>= 1): got {total_steps}")
    num_actors = _int(parser, "trainer", "num_actors")
    _require(num_actors >= 1, "trainer.num_actors",
             f"out of range (>= 1): got {num_actors}")
    lr = _float(parser, "trainer", "lr")
    _require(lr >= 0, "trainer.lr", f"out of range (>= 0): got {lr}")
    entropy_coef = _float(parser, "trainer", "entropy_coef")
    _require(entropy_coef >= 0, "trainer.entropy_coef",
             f"out of range (>= 0): got {entropy_coef}")
    value_coef = _float(parser, "trainer", "value_coef")
    _require(value_coef >= 0, "trainer.value_coef",
             f"out of range (>= 0): got {value_coef}")
    clip_raw = _raw(parser, "trainer", "clip_norm").strip()
    clip_norm = None if clip_raw in ("", "none") else _float(
        parser, "trainer", "clip_norm")
    _require(clip_norm is None or clip_norm > 0, "trainer.clip_norm",
             f"out of range (> 0 or none): got {clip_norm}")
    rmsprop_decay = _float(parser, "trainer", "rmsprop_decay")
    _require(0.0 < rmsprop_decay < 1.0, "trainer.rmsprop_decay",
             f"out of range (0, 1): got {rmsprop_decay}")
    rmsprop_eps = _float(parser, "trainer", "rmsprop_eps")
    _require(rmsprop_eps > 0, "trainer.rmsprop_eps",
             f"out of range (> 0): got {rmsprop_eps}")
    stop_raw = _raw(parser, "trainer", "stop_at_return").strip()
    stop_at = None if stop_raw in ("", "none") else float(stop_raw)
    stop_window = _int(parser, "trainer", "stop_window")
    _require(stop_window >= 1, "trainer.stop_window",
             f"out of range (>= 1): got {stop_window}")
    trainer = TrainerConfig(
        total_steps=total_steps, num_actors=num_actors, lr=lr,
        lr_decay=_bool(parser, "trainer", "lr_decay"),
        entropy_coef=entropy_coef, value_coef=value_coef,
        clip_norm=clip_norm, rmsprop_decay=rmsprop_decay,
        rmsprop_eps=rmsprop_eps, stop_at_return=stop_at,
        stop_window=stop_window)

    seeds_raw = _raw(parser, "run", "seeds")
    try:
        seeds = tuple(int(s) for s in seeds_raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"run.seeds must be comma-separated integers, "
                          f"got {seeds_raw!r}")
    _require(len(seeds) > 0, "run.seeds", "must list at least one seed")
    metrics_interval = _int(parser, "run", "metrics_interval")
    _require(metrics_interval >= 1, "run.metrics_interval",
             f"out of range (>= 1): got {metrics_interval}")
    checkpoint_interval = _int(parser, "run", "checkpoint_interval")
    _require(checkpoint_interval >= 0, "run.checkpoint_interval",
             f"out of range (>= 0): got {checkpoint_interval}")

    rc = RunConfig(
        env_name=env_name, env_size=env_size, env_step_limit=step_limit,
        env_seed=env_seed, agent=agent, conv_specs=conv_specs,
        fc_units=fc_units, hidden_units=hidden_units, trainer=trainer,
        seeds=seeds, out_dir=_raw(parser, "run", "out_dir").strip(),
        metrics_interval=metrics_interval,
        checkpoint_interval=checkpoint_interval, source_text=text)
    try:
        rc.encoder_config()
    except ValueError as exc:
        raise ConfigError(f"agent.conv invalid for a {env_size}x{env_size} "
                          f"observation: {exc}") from exc
    return rc


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def to_ini(rc):
    """Canonical serialization of the effective configuration."""
    conv = ",".join(f"{f}:{k}:{s}" for f, k, s in rc.conv_specs)
    t = rc.trainer
    a = rc.agent
    w = a.weights
    lines = [
        "[run]",
        f"out_dir = {rc.out_dir}",
        f"seeds = {','.join(str(s) for s in rc.seeds)}",
        f"metrics_interval = {rc.metrics_interval}",
        f"checkpoint_interval = {rc.checkpoint_interval}",
        "",
        "[env]",
        f"name = {rc.env_name}",
        f"size = {rc.env_size}",
        f"step_limit = {rc.env_step_limit}",
        f"seed = {rc.env_seed}",
        "",
        "[agent]",
        f"subgoals = {','.join(a.active_subgoals)}",
        f"refresh = {a.subgoal_refresh_interval}",
        f"hidden_units = {rc.hidden_units}",
        f"bptt_manager = {a.bptt_manager}",
        f"bptt_worker = {a.bptt_worker}",
        f"gamma = {a.gamma!r}",
        f"block_size = {a.block_size}",
        f"conv = {conv}",
        f"fc_units = {rc.fc_units}",
        "",
        "[weights]",
        f"eta = {w.eta!r}",
        f"dc_unit = {w.dc_unit!r}",
        f"alpha = {w.alpha!r}",
        "",
        "[trainer]",
        f"total_steps = {t.total_steps}",
        f"num_actors = {t.num_actors}",
        f"lr = {t.lr!r}",
        f"lr_decay = {str(t.lr_decay).lower()}",
        f"entropy_coef = {t.entropy_coef!r}",
        f"value_coef = {t.value_coef!r}",
        f"clip_norm = {'none' if t.clip_norm is None else repr(t.clip_norm)}",
        f"rmsprop_decay = {t.rmsprop_decay!r}",
        f"rmsprop_eps = {t.rmsprop_eps!r}",
        f"stop_at_return = "
        f"{'none' if t.stop_at_return is None else repr(t.stop_at_return)}",
        f"stop_window = {t.stop_window}",
        "",
    ]
    return "\n".join(lines)


def apply_overrides(rc, seeds=None, actors=None, subgoals=None, out_dir=None):
    """Apply command-line overrides, re-running validation where needed."""
    agent = rc.agent
    trainer = rc.trainer
    if subgoals is not None:
        if isinstance(subgoals, str):
            subgoals = subgoals.split(",")
        kinds = tuple(s.strip() for s in subgoals if s.strip())
        for kind in kinds:
            if kind not in KIND_ORDER:
                raise ConfigError(f"agent.subgoals has unknown kind {kind!r} "
                                  f"(valid: {', '.join(KIND_ORDER)})")
        if not kinds:
            raise ConfigError("agent.subgoals must list at least one kind")
        agent = dataclasses.replace(agent, active_subgoals=kinds)
    if actors is not None:
        if actors < 1:
            raise ConfigError(f"trainer.num_actors out of range (>= 1): "
                              f"got {actors}")
        trainer = dataclasses.replace(trainer, num_actors=actors)
    new_seeds = rc.seeds
    if seeds is not None:
        if isinstance(seeds, str):
            seeds = [s for s in seeds.split(",") if s.strip()]
        try:
            new_seeds = tuple(int(s) for s in seeds)
        except (TypeError, ValueError):
            raise ConfigError(f"run.seeds must be comma-separated integers, "
                              f"got {seeds!r}")
        if not new_seeds:
            raise ConfigError("run.seeds must list at least one seed")
    return dataclasses.replace(
        rc, agent=agent, trainer=trainer, seeds=new_seeds,
        out_dir=rc.out_dir if out_dir is None else out_dir)
