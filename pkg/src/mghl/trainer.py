"""Asynchronous advantage actor-critic training of the Worker and every
goal policy from the same experience stream.

Each actor owns an environment plus network replicas and loops: sync from
the shared store, roll out a Worker segment (<= bptt_worker steps) while
slicing goal-policy segments every bptt_manager ticks, compute losses,
push gradients, reload. The Worker's loss reads the mixed reward stream;
every goal policy's loss reads the extrinsic stream only, and each stats
dict records which stream it consumed so the separation is checkable.

Single-actor mode runs everything inline and is bitwise deterministic for
a given seed; multi-actor mode forks one process per actor around a shared
parameter store and a metrics queue.
"""

from __future__ import annotations

import multiprocessing as mp
import queue as queue_mod
import time
import traceback
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .store import SharedParamStore
from .tensor import GradientTape, Tensor, apply_primitive


def _ap(tape, op, *inputs, **attrs):
    return apply_primitive(op, inputs, attrs, tape=tape)


# ---------------------------------------------------------------------------
# returns


def nstep_returns(rewards, bootstrap, gamma):
    """Backward recursion R_t = r_t + gamma * R_{t+1}, seeded by the
    bootstrap value past the last step."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("nstep_returns needs at least one reward")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    out = np.empty(rewards.size)
    acc = float(bootstrap)
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def discounted_returns(rewards, discounts, bootstrap):
    """Per-index-discount recursion R_t = r_t + d_t * R_{t+1}; d_t is the
    discount accumulated across the steps the entry aggregates, so entries
    spanning several environment steps chain correctly."""
    rewards = np.asarray(rewards, dtype=np.float64)
    discounts = np.asarray(discounts, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("discounted_returns needs at least one reward")
    if rewards.shape != discounts.shape:
        raise ValueError(f"rewards {rewards.shape} and discounts "
                         f"{discounts.shape} must align")
    out = np.empty(rewards.size)
    acc = float(bootstrap)
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + discounts[t] * acc
        out[t] = acc
    return out


# ---------------------------------------------------------------------------
# configuration and segment records


@dataclass(frozen=True)
class TrainerConfig:
    total_steps: int
    num_actors: int = 8
    lr: float = 7e-4
    lr_decay: bool = True
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    clip_norm: float = 40.0
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    seed: int = 0
    stop_at_return: float = None
    stop_window: int = 20

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if self.num_actors < 1:
            raise ValueError("num_actors must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        if self.value_coef < 0:
            raise ValueError("value_coef must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must be in (0, 1)")
        if self.rmsprop_eps <= 0:
            raise ValueError("rmsprop_eps must be positive")
        if self.stop_window < 1:
            raise ValueError("stop_window must be >= 1")


@dataclass
class RolloutSegment:
    """A contiguous slice of experience for one network.

    owner is "worker" or a goal policy's prefix (e.g. "goal_pc");
    transitions are Transition records for the Worker and GoalStep records
    for a goal policy; initial_state is the (h, c) pair the recurrent core
    was in before the first entry.
    """

    owner: str
    transitions: list
    bootstrap: float
    initial_state: tuple


@dataclass
class ManagerTick:
    """One subgoal-selection event plus the extrinsic reward its window
    accumulates until the next selection (discount tracks gamma^j within
    the window)."""

    obs: np.ndarray
    prev_reward: float
    prev_action_onehot: np.ndarray
    indices: dict
    states: dict
    values: dict
    reward: float = 0.0
    discount: float = 1.0


@dataclass
class GoalStep:
    """Per-kind view of a ManagerTick inside a goal-policy segment."""

    obs: np.ndarray
    prev_reward: float
    prev_action_onehot: np.ndarray
    index: int
    reward: float
    discount: float


# ---------------------------------------------------------------------------
# segment losses


def _unroll(tape, core, xs, initial_state):
    """Run the recurrent core over a whole segment. xs is (T, input_width);
    the input projection is one matmul, then cells unroll per step. Returns
    the hidden states stacked as (T, H)."""
    n = core.hidden_units
    steps = xs.data.shape[0]
    xz = core.project_input(tape, xs)  # (T, 4H)
    state = (Tensor(np.asarray(initial_state[0], dtype=np.float64)),
             Tensor(np.asarray(initial_state[1], dtype=np.float64)))
    rows = []
    for t in range(steps):
        xz_t = _ap(tape, "slice", xz, start=t, stop=t + 1)
        xz_t = _ap(tape, "reshape", xz_t, shape=(4 * n,))
        h, state = core.step_from_projection(tape, xz_t, state)
        rows.append(_ap(tape, "reshape", h, shape=(1, n)))
    return _ap(tape, "concat", *rows, axis=0)


def _actor_critic_terms(tape, probs, values, returns, actions,
                        entropy_coef, value_coef, advantages=None):
    """Shared loss assembly: score-function policy term with the advantage
    held constant, value regression, optional entropy bonus. Returns the
    scalar loss plus raw term values for stats.

    advantages overrides the (return - value) estimate; because the policy
    term treats the advantage as a constant, a finite-difference probe of
    the loss must hold it fixed the same way, and this is the hook for that.
    """
    if advantages is None:
        adv = returns - values.data  # constant: no gradient flows through it
    else:
        adv = np.asarray(advantages, dtype=np.float64)
    steps = probs.data.shape[0]
    pick = np.zeros_like(probs.data)
    pick[np.arange(steps), actions] = -adv
    logp = _ap(tape, "log", probs)
    pol = _ap(tape, "sum", _ap(tape, "mul", logp, Tensor(pick)))
    diff = _ap(tape, "add", values, Tensor(-returns))
    val = _ap(tape, "sum", _ap(tape, "mul", diff, diff))
    loss = _ap(tape, "add", pol,
               _ap(tape, "mul", val, Tensor(np.asarray(value_coef))))
    if entropy_coef:
        # entropy appears in the loss as +beta * sum_t sum_a p log p
        neg_ent = _ap(tape, "sum", _ap(tape, "mul", probs, logp))
        loss = _ap(tape, "add", loss,
                   _ap(tape, "mul", neg_ent, Tensor(np.asarray(entropy_coef))))
    p = probs.data
    entropy = float(np.mean(-np.sum(np.where(p > 0, p * np.log(p), 0.0),
                                    axis=-1)))
    return loss, adv, float(pol.data), float(val.data), entropy


def worker_loss(segment, worker, gamma, entropy_coef=0.01, value_coef=0.5,
                advantages=None):
    """Loss over a Worker segment: mixed-reward n-step returns drive the
    policy and value terms; the entropy bonus keeps the policy spread.
    Returns (loss tensor, tape, stats)."""
    if segment.owner != "worker":
        raise ValueError(f"worker_loss got a segment owned by "
                         f"{segment.owner!r}, expected 'worker'")
    trs = segment.transitions
    if not trs:
        raise ValueError("worker_loss got an empty segment")
    steps = len(trs)
    rewards = np.array([tr.mixed_reward for tr in trs])
    returns = nstep_returns(rewards, segment.bootstrap, gamma)
    actions = [tr.action for tr in trs]

    tape = GradientTape()
    tape.watch_all(worker.parameters())
    obs = np.stack([tr.obs for tr in trs])
    _, fc = worker.encoder.forward(tape, obs)
    sg = Tensor(np.stack([tr.subgoal_vec for tr in trs]))
    xs = _ap(tape, "concat", fc, sg, axis=1)
    hs = _unroll(tape, worker.core, xs, segment.initial_state)
    probs, values = worker.heads.forward(tape, hs)

    loss, adv, pol, val, entropy = _actor_critic_terms(
        tape, probs, values, returns, actions, entropy_coef, value_coef,
        advantages=advantages)
    stats = {
        "owner": "worker",
        "reward_stream": "mixed",
        "rewards": rewards,
        "returns": returns,
        "advantages": adv,
        "policy_loss": pol / steps,
        "value_loss": val / steps,
        "entropy": entropy,
        "steps": steps,
    }
    return loss, tape, stats


def goal_actor_loss(segment, gp, gamma, value_coef=0.5, advantages=None):
    """Loss over one goal policy's segment: extrinsic-only returns, no
    entropy term, the policy's own critic as baseline. Returns
    (loss tensor, tape, stats)."""
    if segment.owner != gp.prefix:
        raise ValueError(f"goal_actor_loss for {gp.prefix!r} got a segment "
                         f"owned by {segment.owner!r}")
    ticks = segment.transitions
    if not ticks:
        raise ValueError("goal_actor_loss got an empty segment")
    steps = len(ticks)
    rewards = np.array([tk.reward for tk in ticks])
    discounts = np.array([tk.discount for tk in ticks])
    returns = discounted_returns(rewards, discounts, segment.bootstrap)
    actions = [tk.index for tk in ticks]

    tape = GradientTape()
    tape.watch_all(gp.parameters())
    obs = np.stack([tk.obs for tk in ticks])
    _, fc = gp.encoder.forward(tape, obs)
    extra = Tensor(np.stack([
        np.concatenate([np.asarray(tk.prev_action_onehot, dtype=np.float64),
                        [float(tk.prev_reward)]])
        for tk in ticks]))
    xs = _ap(tape, "concat", fc, extra, axis=1)
    hs = _unroll(tape, gp.core, xs, segment.initial_state)
    probs, values = gp.heads.forward(tape, hs)

    loss, adv, pol, val, entropy = _actor_critic_terms(
        tape, probs, values, returns, actions, entropy_coef=0.0,
        value_coef=value_coef, advantages=advantages)
    stats = {
        "owner": gp.prefix,
        "kind": gp.kind,
        "reward_stream": "extrinsic",
        "rewards": rewards,
        "returns": returns,
        "advantages": adv,
        "policy_loss": pol / steps,
        "value_loss": val / steps,
        "entropy": entropy,
        "steps": steps,
    }
    return loss, tape, stats


# ---------------------------------------------------------------------------
# per-episode bookkeeping


class _EpisodeAccumulator:
    def __init__(self, kinds):
        self.kinds = kinds
        self.raw = 0.0
        self.scaled = 0.0
        self.ints = {k: 0.0 for k in kinds}
        self.entropy_sum = 0.0
        self.steps = 0
        self.policy_losses = []
        self.value_losses = []

    def add(self, tr):
        self.raw += tr.raw_ext_reward
        self.scaled += tr.scaled_ext_reward
        for k, v in tr.intrinsic.items():
            self.ints[k] += v
        self.entropy_sum += tr.policy_entropy
        self.steps += 1

    def add_segment_stats(self, stats):
        self.policy_losses.append(stats["policy_loss"])
        self.value_losses.append(stats["value_loss"])

    def row(self, actor_id):
        def opt(kind):
            return self.ints[kind] if kind in self.kinds else None

        return {
            "ext_return_raw": self.raw,
            "ext_return_scaled": self.scaled,
            "int_return_pc": opt("pc"),
            "int_return_dc": opt("dc"),
            "int_return_fc": opt("fc"),
            "int_return_rand": opt("rand"),
            "policy_entropy": self.entropy_sum / max(1, self.steps),
            "value_loss": (sum(self.value_losses) / len(self.value_losses)
                           if self.value_losses else None),
            "policy_loss": (sum(self.policy_losses) / len(self.policy_losses)
                            if self.policy_losses else None),
            "episode_steps": self.steps,
            "actor": actor_id,
        }


# ---------------------------------------------------------------------------
# the actor loop (used by both the inline and the forked paths)


class _ActorLoop:
    def __init__(self, actor_id, agent, env, store, tcfg, emit, should_stop,
                 on_segment=None):
        self.id = actor_id
        self.agent = agent
        self.env = env
        self.store = store
        self.tcfg = tcfg
        self.acfg = agent.cfg
        self.emit = emit
        self.should_stop = should_stop
        self.on_segment = on_segment
        self.kinds = agent.layout.kinds
        self.policy_kinds = tuple(k for k in self.kinds if k != "rand")
        self.worker_names = tuple(agent.worker.parameters())
        self.gp_names = {k: tuple(agent.manager.policies[k].parameters())
                         for k in self.policy_kinds}

    def _lr(self):
        if not self.tcfg.lr_decay:
            return self.tcfg.lr
        frac = 1.0 - self.store.env_steps / self.tcfg.total_steps
        return self.tcfg.lr * max(0.0, frac)

    def _sync_all(self):
        snap = self.store.snapshot()
        self.agent.reload_worker(snap)
        for k in self.policy_kinds:
            self.agent.reload_goal_policy(k, snap)

    def _flush_worker(self, bootstrap):
        seg = RolloutSegment("worker", self.wbuf[:], bootstrap,
                             self.wbuf[0].worker_state)
        loss, tape, stats = worker_loss(
            seg, self.agent.worker, self.acfg.gamma,
            self.tcfg.entropy_coef, self.tcfg.value_coef)
        grads = tape.backward(loss)
        self.store.apply_gradients(grads, self._lr(), self.tcfg.clip_norm)
        self.store.add_env_steps(len(self.wbuf))
        self.agent.reload_worker(self.store.snapshot(self.worker_names))
        self.episode.add_segment_stats(stats)
        if self.on_segment is not None:
            self.on_segment(seg, stats)
        self.wbuf.clear()

    def _flush_manager(self, bootstraps):
        if not self.ticks:
            return
        for k in self.policy_kinds:
            gp = self.agent.manager.policies[k]
            steps = [GoalStep(t.obs, t.prev_reward, t.prev_action_onehot,
                              t.indices[k], t.reward, t.discount)
                     for t in self.ticks]
            seg = RolloutSegment(gp.prefix, steps, bootstraps[k],
                                 self.ticks[0].states[k])
            loss, tape, stats = goal_actor_loss(
                seg, gp, self.acfg.gamma, self.tcfg.value_coef)
            grads = tape.backward(loss)
            self.store.apply_gradients(grads, self._lr(), self.tcfg.clip_norm)
            self.agent.reload_goal_policy(k, self.store.snapshot(self.gp_names[k]))
            if self.on_segment is not None:
                self.on_segment(seg, stats)
        self.ticks.clear()

    def _begin_episode(self):
        obs = self.env.reset()
        self.agent.begin_episode(obs)
        self.episode = _EpisodeAccumulator(self.kinds)
        self.open_tick = None

    def run(self):
        self._sync_all()
        self.wbuf = []
        self.ticks = []
        self._begin_episode()
        while (self.store.env_steps < self.tcfg.total_steps
               and not self.should_stop()):
            tr = self.agent.step(self.env)

            if tr.manager_tick:
                if self.open_tick is not None:
                    self.ticks.append(self.open_tick)
                    if len(self.ticks) >= self.acfg.bptt_manager:
                        self._flush_manager(dict(tr.gp_tick_values))
                self.open_tick = ManagerTick(
                    obs=tr.obs, prev_reward=tr.prev_reward,
                    prev_action_onehot=tr.prev_action_onehot,
                    indices={k: tr.subgoals[k].index for k in self.policy_kinds},
                    states={k: tr.gp_states[k] for k in self.policy_kinds},
                    values=dict(tr.gp_tick_values))
            self.open_tick.reward += self.open_tick.discount * tr.scaled_ext_reward
            self.open_tick.discount *= self.acfg.gamma

            self.wbuf.append(tr)
            self.episode.add(tr)

            if tr.done:
                self.ticks.append(self.open_tick)
                self.open_tick = None
                self._flush_manager({k: 0.0 for k in self.policy_kinds})
                self._flush_worker(0.0)
                self.emit(self.episode.row(self.id))
                self._begin_episode()
            elif len(self.wbuf) >= self.acfg.bptt_worker:
                self._flush_worker(self.agent.worker_bootstrap())


# ---------------------------------------------------------------------------
# run-level plumbing


class _StopTracker:
    """Trailing-window median watcher: records the step at which the median
    episode return first reaches the threshold, and (when a threshold is
    configured) tells the run to stop there."""

    def __init__(self, stop_at, window):
        self.stop_at = stop_at
        self.recent = deque(maxlen=window)
        self.window = window
        self.steps_to_threshold = None

    def update(self, scaled_return, global_step):
        if self.stop_at is None:
            return False
        self.recent.append(scaled_return)
        if (self.steps_to_threshold is None
                and len(self.recent) == self.window
                and float(np.median(self.recent)) >= self.stop_at):
            self.steps_to_threshold = int(global_step)
        return self.steps_to_threshold is not None

    @property
    def triggered(self):
        return self.steps_to_threshold is not None


@dataclass
class TrainResult:
    env_steps: int
    episodes: int
    steps_to_threshold: int
    wallclock_s: float
    rows: list
    final_params: dict
    stopped_early: bool


def _derive_rng(seed_seq):
    return np.random.default_rng(seed_seq)


def _fork_actor_main(actor_id, seed_seq, store, tcfg, agent_factory,
                     env_factory, out_queue, stop_flag):
    try:
        agent = agent_factory(_derive_rng(seed_seq))
        env = env_factory(actor_id)
        loop = _ActorLoop(
            actor_id, agent, env, store, tcfg,
            emit=lambda row: out_queue.put(("row", actor_id, row)),
            should_stop=lambda: bool(stop_flag.value))
        loop.run()
        out_queue.put(("done", actor_id, None))
    except Exception:
        out_queue.put(("error", actor_id, traceback.format_exc()))


def train(tcfg, agent_factory, env_factory, on_segment=None,
          checkpoint_every=None, checkpoint_fn=None):
    """Run actors until the step budget (or the early-stop threshold) and
    return the metrics stream plus final parameters.

    agent_factory(rng) builds a fresh agent; env_factory(actor_index)
    builds that actor's environment. With num_actors == 1 everything runs
    inline (bitwise deterministic, wallclock column left empty); otherwise
    one process per actor is forked around the shared store. on_segment
    (inline only) is called with (segment, stats) after every loss.
    checkpoint_fn(params, env_steps) fires whenever the global step count
    crosses a multiple of checkpoint_every (checked at episode ends).
    """
    if checkpoint_every is not None and checkpoint_every < 1:
        raise ValueError("checkpoint_every must be >= 1 or None")
    seeds = np.random.SeedSequence(tcfg.seed).spawn(tcfg.num_actors + 1)
    proto = agent_factory(_derive_rng(seeds[0]))
    init_params = {name: t.data for name, t in proto.parameters().items()}
    shared = tcfg.num_actors > 1
    store = SharedParamStore(init_params, decay=tcfg.rmsprop_decay,
                             eps=tcfg.rmsprop_eps, shared=shared)
    tracker = _StopTracker(tcfg.stop_at_return, tcfg.stop_window)
    next_ckpt = {"at": checkpoint_every}

    def maybe_checkpoint():
        if checkpoint_every is None or checkpoint_fn is None:
            return
        steps_now = store.env_steps
        if steps_now >= next_ckpt["at"]:
            checkpoint_fn(store.snapshot(), steps_now)
            while next_ckpt["at"] <= steps_now:
                next_ckpt["at"] += checkpoint_every

    if not shared:
        rows = []
        flags = {"stop": False}

        def emit(row):
            at_step = store.env_steps
            row["global_step"] = at_step
            row["episode_index"] = len(rows)
            row["wallclock_s"] = None
            rows.append(row)
            if tracker.update(row["ext_return_scaled"], at_step):
                flags["stop"] = True
            maybe_checkpoint()

        agent = agent_factory(_derive_rng(seeds[1]))
        env = env_factory(0)
        loop = _ActorLoop(0, agent, env, store, tcfg, emit,
                          should_stop=lambda: flags["stop"],
                          on_segment=on_segment)
        loop.run()
        return TrainResult(
            env_steps=store.env_steps, episodes=len(rows),
            steps_to_threshold=tracker.steps_to_threshold,
            wallclock_s=None, rows=rows, final_params=store.snapshot(),
            stopped_early=flags["stop"])

    ctx = mp.get_context("fork")
    out_queue = ctx.Queue()
    stop_flag = ctx.Value("b", 0, lock=False)
    procs = []
    for i in range(tcfg.num_actors):
        p = ctx.Process(target=_fork_actor_main,
                        args=(i, seeds[i + 1], store, tcfg, agent_factory,
                              env_factory, out_queue, stop_flag),
                        daemon=True)
        p.start()
        procs.append(p)

    rows = []
    t0 = time.monotonic()
    done = 0
    failure = None
    try:
        while done < tcfg.num_actors:
            try:
                kind, actor_id, payload = out_queue.get(timeout=1.0)
            except queue_mod.Empty:
                if not any(p.is_alive() for p in procs):
                    raise RuntimeError(
                        "an actor process exited without reporting completion")
                continue
            if kind == "error":
                failure = (actor_id, payload)
                stop_flag.value = 1
                break
            if kind == "done":
                done += 1
                continue
            payload["global_step"] = store.env_steps
            payload["episode_index"] = len(rows)
            payload["wallclock_s"] = time.monotonic() - t0
            rows.append(payload)
            if tracker.update(payload["ext_return_scaled"],
                              payload["global_step"]):
                stop_flag.value = 1
            maybe_checkpoint()
    finally:
        stop_flag.value = 1
        for p in procs:
            p.join(timeout=30.0)
        for p in procs:
            if p.is_alive():
                p.terminate()
                p.join(timeout=5.0)

    if failure is not None:
        raise RuntimeError(f"actor {failure[0]} failed:\n{failure[1]}")

    return TrainResult(
        env_steps=store.env_steps, episodes=len(rows),
        steps_to_threshold=tracker.steps_to_threshold,
        wallclock_s=time.monotonic() - t0, rows=rows,
        final_params=store.snapshot(),
        stopped_early=tracker.triggered)
