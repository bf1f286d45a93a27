"""Intrinsic rewards for the auxiliary control subgoals, plus composition
and intrinsic/extrinsic mixing.

All functions are pure and operate on plain ndarrays. Ratio-style rewards
(pixel and feature control) return 0 when nothing changed between frames:
the controlled quantity is defined as a share of total change, and a zero
denominator means there was no change to control.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Canonical order of subgoal kinds inside the concatenated one-hot vector.
KIND_ORDER = ("pc", "dc", "fc", "rand")

# Direction vocabulary for direction control; "stay" covers every action
# that does not move the agent.
DIRECTIONS = ("N", "S", "E", "W", "stay")


@dataclass(frozen=True)
class RewardWeights:
    """Scalar knobs of the reward scheme.

    The mixing coefficient (1 - alpha) / 2 is fixed: it is never rescaled
    by how many subgoals are active.
    """

    eta: float = 0.05
    dc_unit: float = 0.01
    alpha: float = 0.8

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class PixelBlockMask:
    """One tile of the observation partition used by pixel control."""

    block_index: int
    mask: np.ndarray = field(repr=False)


def block_partition(obs_shape, block_size):
    """Tile the (C, H, W) observation into square spatial blocks.

    Every mask spans all channels of its tile; the masks are disjoint and
    cover the observation exactly.
    """
    if len(obs_shape) != 3:
        raise ValueError(f"obs_shape must be (C, H, W), got {obs_shape}")
    c, h, w = obs_shape
    if h % block_size or w % block_size:
        raise ValueError(
            f"block size {block_size} does not tile a {h}x{w} observation")
    masks = []
    per_row = w // block_size
    for bi in range(h // block_size):
        for bj in range(per_row):
            mask = np.zeros(obs_shape)
            mask[:, bi * block_size:(bi + 1) * block_size,
                 bj * block_size:(bj + 1) * block_size] = 1.0
            masks.append(PixelBlockMask(bi * per_row + bj, mask))
    return masks


def pixel_control_reward(prev_obs, obs, block, eta):
    """eta * ||mask * (obs - prev_obs)||^2 / ||obs - prev_obs||^2."""
    prev_obs = np.asarray(prev_obs)
    obs = np.asarray(obs)
    if prev_obs.shape != obs.shape or obs.shape != block.mask.shape:
        raise ValueError(
            f"pixel_control_reward: shapes differ, prev {prev_obs.shape}, "
            f"obs {obs.shape}, mask {block.mask.shape}")
    diff = obs - prev_obs
    total = float(np.sum(diff * diff))
    if total == 0.0:
        return 0.0
    masked = block.mask * diff
    inside = float(np.sum(masked * masked))
    return eta * inside / total


def direction_control_reward(action, subgoal_dir, mapping, unit=0.01):
    """unit if the action's direction equals the subgoal direction, else 0."""
    if action not in mapping:
        raise ValueError(f"direction_control_reward: action {action!r} has no "
                         f"direction mapping")
    if subgoal_dir not in DIRECTIONS:
        raise ValueError(f"direction_control_reward: unknown direction "
                         f"{subgoal_dir!r}")
    return unit if mapping[action] == subgoal_dir else 0.0


def feature_control_reward(prev_feats, feats, channel, eta):
    """eta * ||df_channel|| / sum_k ||df_k|| over per-channel L2 norms."""
    prev_feats = np.asarray(prev_feats)
    feats = np.asarray(feats)
    if prev_feats.shape != feats.shape:
        raise ValueError(f"feature_control_reward: shapes differ, "
                         f"{prev_feats.shape} vs {feats.shape}")
    if not 0 <= channel < feats.shape[0]:
        raise ValueError(f"feature_control_reward: channel {channel} out of "
                         f"range for {feats.shape[0]} channels")
    diff = feats - prev_feats
    norms = np.sqrt(np.sum(diff * diff, axis=tuple(range(1, diff.ndim))))
    total = float(norms.sum())
    if total == 0.0:
        return 0.0
    return eta * float(norms[channel]) / total


def random_subgoal_reward(action, token, space, unit=0.01):
    """unit when the action matches the uniformly drawn token."""
    if not 0 <= token < space:
        raise ValueError(f"random_subgoal_reward: token {token} out of "
                         f"range [0, {space})")
    return unit if action == token else 0.0


def compose_intrinsic(components):
    """Plain sum of the active per-subgoal rewards."""
    if isinstance(components, dict):
        components = components.values()
    return float(sum(components))


def mix_rewards(r_int, r_ext, alpha):
    """((1 - alpha) / 2) * r_int + alpha * r_ext."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"mix_rewards: alpha must be in [0, 1], got {alpha}")
    return ((1.0 - alpha) / 2.0) * r_int + alpha * r_ext
