"""Multi-goal hierarchical reinforcement learning on grid tasks.

A Manager issues several kinds of subgoal at once (pixel-change blocks,
movement directions, feature activations, optionally a uniformly-resampled
distractor); a recurrent Worker acts under the superimposed intrinsic
rewards plus the scaled task reward. Training is asynchronous
advantage-actor-critic over forked actor processes sharing one parameter
store. The package ships desk-scale grid environments, an experiment CLI,
and binary checkpoints.
"""

from .agent import AgentConfig, HrlAgent, Subgoal, Transition, build_agent
from .checkpoint import (CheckpointError, deserialize_params,
                         load_checkpoint, save_checkpoint, serialize_params)
from .config import (ConfigError, RunConfig, apply_overrides, load_config,
                     parse_config, to_ini)
from .envs import (ENV_NAMES, KeyDoorEnv, CollectEnv, ShiftGridEnv,
                   make_env, scripted_optimal_action)
from .nets import EncoderConfig, GoalPolicy, WorkerNet
from .rewards import (KIND_ORDER, RewardWeights, direction_control_reward,
                      feature_control_reward, mix_rewards,
                      pixel_control_reward, random_subgoal_reward)
from .runs import (ABLATION_SETTINGS, ROBUSTNESS_SETTING, SOLVE_THRESHOLD,
                   evaluate_agent, evaluate_policy, run_ablation, run_eval,
                   run_train, train_one_seed)
from .store import SharedParamStore, apply_gradients
from .tensor import GradientTape, Tensor
from .trainer import (TrainerConfig, TrainResult, goal_actor_loss,
                      nstep_returns, train, worker_loss)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_SETTINGS", "AgentConfig", "CheckpointError", "CollectEnv",
    "ConfigError", "ENV_NAMES", "EncoderConfig",
    "GoalPolicy", "GradientTape", "HrlAgent", "KIND_ORDER", "KeyDoorEnv",
    "ROBUSTNESS_SETTING", "RewardWeights", "RunConfig", "SOLVE_THRESHOLD",
    "SharedParamStore", "ShiftGridEnv", "Subgoal", "Tensor", "TrainResult",
    "TrainerConfig", "Transition", "WorkerNet", "apply_gradients",
    "apply_overrides", "build_agent", "deserialize_params",
    "direction_control_reward", "evaluate_agent", "evaluate_policy",
    "feature_control_reward", "goal_actor_loss", "load_checkpoint",
    "load_config", "make_env", "mix_rewards", "nstep_returns",
    "parse_config", "pixel_control_reward", "run_ablation", "run_eval",
    "random_subgoal_reward", "run_train", "save_checkpoint",
    "scripted_optimal_action",
    "serialize_params", "to_ini", "train", "train_one_seed", "worker_loss",
]
