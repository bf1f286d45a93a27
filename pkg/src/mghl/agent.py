"""Agent assembly: the Manager's goal policies pick one subgoal per active
kind each refresh step, the Worker acts under the concatenated one-hot
subgoal block, and every step's intrinsic/extrinsic reward bookkeeping is
recorded as a Transition for the trainer.

The random ("rand") subgoal kind has no policy behind it: its index is
drawn uniformly each refresh, which is exactly what makes it a bad
instruction to follow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs import direction_of
from .nets import ManagerObservation
from .rewards import (
    DIRECTIONS,
    KIND_ORDER,
    RewardWeights,
    block_partition,
    compose_intrinsic,
    direction_control_reward,
    feature_control_reward,
    mix_rewards,
    pixel_control_reward,
    random_subgoal_reward,
)


@dataclass(frozen=True)
class Subgoal:
    kind: str
    index: int
    onehot: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class AgentConfig:
    active_subgoals: tuple = ("pc", "fc", "dc")
    subgoal_refresh_interval: int = 1
    weights: RewardWeights = field(default_factory=RewardWeights)
    bptt_manager: int = 20
    bptt_worker: int = 100
    gamma: float = 0.99
    block_size: int = 4

    def __post_init__(self):
        kinds = tuple(self.active_subgoals)
        if not kinds:
            raise ValueError("active_subgoals must be nonempty")
        if len(set(kinds)) != len(kinds):
            raise ValueError(f"duplicate subgoal kinds in {kinds}")
        for k in kinds:
            if k not in KIND_ORDER:
                raise ValueError(f"unknown subgoal kind {k!r}; valid: {KIND_ORDER}")
        # store in canonical layout order regardless of the order given
        object.__setattr__(self, "active_subgoals",
                           tuple(k for k in KIND_ORDER if k in kinds))
        if self.subgoal_refresh_interval < 1:
            raise ValueError("subgoal_refresh_interval must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.bptt_manager < 1 or self.bptt_worker < 1:
            raise ValueError("BPTT lengths must be positive")


class SubgoalLayout:
    """Fixed ordering and widths of the concatenated one-hot subgoal block."""

    def __init__(self, kinds, sizes):
        self.kinds = tuple(k for k in KIND_ORDER if k in kinds)
        if set(self.kinds) != set(kinds):
            raise ValueError(f"unknown kinds in {kinds}")
        self.sizes = {k: int(sizes[k]) for k in self.kinds}
        self.offsets = {}
        off = 0
        for k in self.kinds:
            self.offsets[k] = off
            off += self.sizes[k]
        self.total_width = off

    def make_subgoal(self, kind, index):
        size = self.sizes[kind]
        if not 0 <= index < size:
            raise ValueError(f"{kind} subgoal index {index} out of range [0,{size})")
        onehot = np.zeros(size)
        onehot[index] = 1.0
        return Subgoal(kind, int(index), onehot)

    def encode(self, subgoals):
        """Concatenate per-kind one-hots in layout order."""
        if tuple(sg.kind for sg in subgoals) != self.kinds:
            raise ValueError(
                f"subgoal kinds {[sg.kind for sg in subgoals]} do not match "
                f"layout order {self.kinds}")
        vec = np.zeros(self.total_width)
        for sg in subgoals:
            if sg.onehot.shape != (self.sizes[sg.kind],):
                raise ValueError(f"{sg.kind} onehot has wrong width")
            off = self.offsets[sg.kind]
            vec[off:off + self.sizes[sg.kind]] = sg.onehot
        return vec


def encode_subgoals(subgoals, layout):
    return layout.encode(subgoals)


class Manager:
    """The set of independent goal policies plus the policy-free random
    kind. Selection advances each policy's recurrent state."""

    def __init__(self, goal_policies, layout):
        self.policies = dict(goal_policies)  # kind -> GoalPolicy
        self.layout = layout
        if "rand" in self.policies:
            raise ValueError("the random subgoal kind has no goal policy")
        needed = {k for k in layout.kinds if k != "rand"}
        if set(self.policies) != needed:
            raise ValueError(f"goal policies {set(self.policies)} do not match "
                             f"active kinds {needed}")

    @property
    def kinds(self):
        return self.layout.kinds

    def zero_states(self):
        return {k: gp.zero_state() for k, gp in self.policies.items()}

    def select(self, mobs, states, rng, greedy=False):
        """Sample one subgoal per active kind; returns (subgoals in layout
        order, new per-policy states, per-kind distributions, per-kind
        critic values at this tick)."""
        subgoals = []
        new_states = dict(states)
        dists = {}
        values = {}
        for kind in self.layout.kinds:
            if kind == "rand":
                idx = int(rng.integers(self.layout.sizes["rand"]))
            else:
                gp = self.policies[kind]
                probs, value, new_states[kind] = gp.forward(
                    None, mobs.observation, mobs.prev_extrinsic_reward,
                    mobs.prev_action, states[kind])
                p = probs.data
                dists[kind] = p
                values[kind] = float(value.data[0])
                idx = int(np.argmax(p)) if greedy else int(rng.choice(len(p), p=p))
            subgoals.append(self.layout.make_subgoal(kind, idx))
        return subgoals, new_states, dists, values


def select_subgoals(manager, mobs, states, rng, greedy=False):
    return manager.select(mobs, states, rng, greedy=greedy)


def act(worker, obs, subgoal_onehots, state, rng, greedy=False):
    """Sample an action from the Worker. Returns (action, log-prob, value,
    new state, action distribution, feature maps)."""
    probs, value, new_state, feats = worker.forward(None, obs, subgoal_onehots,
                                                    state)
    p = probs.data
    a = int(np.argmax(p)) if greedy else int(rng.choice(len(p), p=p))
    return a, float(np.log(p[a])), float(value.data[0]), new_state, p, feats


@dataclass
class Transition:
    obs: np.ndarray
    next_obs: np.ndarray
    action: int
    subgoals: dict
    subgoal_vec: np.ndarray   # the concatenated one-hot block the Worker saw
    intrinsic: dict
    raw_ext_reward: float
    scaled_ext_reward: float
    mixed_reward: float
    done: bool
    worker_state: tuple       # (h, c) arrays before this step
    gp_states: dict           # kind -> (h, c) arrays before this step
    manager_tick: bool
    gp_tick_values: dict      # kind -> V^M at this tick (valid when ticked)
    prev_reward: float        # manager-observation components at this step
    prev_action_onehot: np.ndarray
    policy_entropy: float


class HrlAgent:
    """One actor's agent: Worker + Manager replicas, recurrent states,
    subgoal persistence, and per-step reward computation."""

    def __init__(self, worker, manager, cfg, rng, greedy=False):
        self.worker = worker
        self.manager = manager
        self.cfg = cfg
        self.layout = manager.layout
        self.rng = rng
        self.greedy = greedy
        self.masks = block_partition(worker.encoder.cfg.input_shape,
                                     cfg.block_size)
        if "pc" in self.layout.kinds and self.layout.sizes["pc"] != len(self.masks):
            raise ValueError("pc subgoal space must equal the block count")
        self.num_actions = worker.num_actions
        self._obs = None
        self._needs_reset = True

    # -- lifecycle ---------------------------------------------------------

    def begin_episode(self, obs):
        self._obs = obs
        self.worker_state = self.worker.zero_state()
        self.gp_states = self.manager.zero_states()
        self.prev_reward = 0.0
        self.prev_action_onehot = np.zeros(self.num_actions)
        self.step_counter = 0
        self.subgoals = None
        self._enc_cache = None
        self._needs_reset = False

    def parameters(self):
        out = dict(self.worker.parameters())
        for gp in self.manager.policies.values():
            out.update(gp.parameters())
        return out

    def reload_worker(self, state):
        self.worker.load_state(state)
        self._enc_cache = None

    def reload_goal_policy(self, kind, state):
        self.manager.policies[kind].load_state(state)

    # -- stepping ----------------------------------------------------------

    def _encode(self, obs):
        if self._enc_cache is not None and self._enc_cache[0] is obs:
            return self._enc_cache[1], self._enc_cache[2]
        feats, fc = self.worker.encoder.forward(None, obs)
        self._enc_cache = (obs, feats.data, fc)
        return feats.data, fc

    def step(self, env):
        """Select subgoals if due, act, step the env, compute all rewards."""
        if self._needs_reset:
            raise RuntimeError("episode finished; call begin_episode first")
        obs = self._obs
        tick = self.step_counter % self.cfg.subgoal_refresh_interval == 0
        worker_state_before = (self.worker_state[0].data, self.worker_state[1].data)
        gp_states_before = {k: (s[0].data, s[1].data)
                            for k, s in self.gp_states.items()}
        tick_values = {}
        if tick or self.subgoals is None:
            tick = True
            mobs = ManagerObservation(obs, self.prev_reward,
                                      self.prev_action_onehot)
            self.subgoals, self.gp_states, _, tick_values = self.manager.select(
                mobs, self.gp_states, self.rng, greedy=self.greedy)
        subgoal_vec = self.layout.encode(self.subgoals)

        feats_before, fc = self._encode(obs)
        probs, value, self.worker_state = self.worker.step_from_enc(
            None, fc, subgoal_vec, self.worker_state)
        p = probs.data
        action = int(np.argmax(p)) if self.greedy else int(self.rng.choice(len(p), p=p))
        entropy = float(-np.sum(np.where(p > 0, p * np.log(p), 0.0)))

        result = env.step(action)
        next_obs = result.obs
        feats_after, _ = self._encode(next_obs)

        w = self.cfg.weights
        intrinsic = {}
        for sg in self.subgoals:
            if sg.kind == "pc":
                intrinsic["pc"] = pixel_control_reward(
                    obs, next_obs, self.masks[sg.index], w.eta)
            elif sg.kind == "dc":
                intrinsic["dc"] = direction_control_reward(
                    action, DIRECTIONS[sg.index],
                    env.action_set.direction_map, w.dc_unit)
            elif sg.kind == "fc":
                intrinsic["fc"] = feature_control_reward(
                    feats_before, feats_after, sg.index, w.eta)
            else:
                intrinsic["rand"] = random_subgoal_reward(
                    action, sg.index, self.layout.sizes["rand"], w.dc_unit)

        mixed = mix_rewards(compose_intrinsic(intrinsic),
                            result.scaled_ext_reward, w.alpha)

        tr = Transition(
            obs=obs, next_obs=next_obs, action=action,
            subgoals={sg.kind: sg for sg in self.subgoals},
            subgoal_vec=subgoal_vec,
            intrinsic=intrinsic,
            raw_ext_reward=result.raw_ext_reward,
            scaled_ext_reward=result.scaled_ext_reward,
            mixed_reward=mixed, done=result.done,
            worker_state=worker_state_before,
            gp_states=gp_states_before,
            manager_tick=tick,
            gp_tick_values=tick_values,
            prev_reward=self.prev_reward,
            prev_action_onehot=self.prev_action_onehot,
            policy_entropy=entropy,
        )

        self.prev_reward = result.scaled_ext_reward
        onehot = np.zeros(self.num_actions)
        onehot[action] = 1.0
        self.prev_action_onehot = onehot
        self.step_counter += 1
        self._obs = next_obs
        if result.done:
            self._needs_reset = True
        return tr

    # -- bootstrap helpers (values under the current replica params) -------

    def worker_bootstrap(self):
        """V(s_now, current subgoals) from the live worker replica."""
        _, fc = self._encode(self._obs)
        vec = self.layout.encode(self.subgoals)
        _, value, _ = self.worker.step_from_enc(None, fc, vec, self.worker_state)
        return float(value.data[0])

    def goal_policy_bootstrap(self, kind):
        """V^M_kind(x_now) from the live goal-policy replica."""
        gp = self.manager.policies[kind]
        probs, value, _ = gp.forward(None, self._obs, self.prev_reward,
                                     self.prev_action_onehot,
                                     self.gp_states[kind])
        return float(value.data[0])


def agent_step(agent, env):
    return agent.step(env)


def build_agent(env_like, agent_cfg, enc_cfg, hidden_units, rng, greedy=False):
    """Construct a full agent (Worker + goal policies) for an environment.

    env_like needs obs_shape and num_actions; spaces are derived from the
    encoder config and block size.
    """
    from .nets import GoalPolicy, WorkerNet  # local to avoid cycle at import

    if tuple(enc_cfg.input_shape) != tuple(env_like.obs_shape):
        raise ValueError(f"encoder input {enc_cfg.input_shape} != environment "
                         f"observation {env_like.obs_shape}")
    n_actions = env_like.num_actions
    c, h, wdt = enc_cfg.input_shape
    blocks = (h // agent_cfg.block_size) * (wdt // agent_cfg.block_size)
    spaces = {"pc": blocks, "dc": len(DIRECTIONS),
              "fc": enc_cfg.feature_shape[0], "rand": n_actions}
    kinds = agent_cfg.active_subgoals
    layout = SubgoalLayout(kinds, {k: spaces[k] for k in kinds})
    worker = WorkerNet(enc_cfg, hidden_units, layout.total_width, n_actions, rng)
    policies = {k: GoalPolicy(k, spaces[k], enc_cfg, hidden_units, n_actions, rng)
                for k in kinds if k != "rand"}
    manager = Manager(policies, layout)
    return HrlAgent(worker, manager, agent_cfg, rng, greedy=greedy)
