"""Networks: convolutional encoder, LSTM core, actor/critic heads, and the
Worker / goal-policy assemblies built from them.

Weight layout convention is input-side first ((in, out) matrices), so the
same parameter works for single vectors (v @ W) and for time-batched
matrices (X @ W) inside the segment losses. Parameters are named
"<prefix>/<layer>/<tensor>"; prefixes keep the Worker and every goal policy
fully disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (GradientTape, ShapeMismatchError, Tensor,
                     apply_primitive, _fw_conv2d, _fw_sigmoid, _fw_softmax)


def _ap(tape, op, *inputs, **attrs):
    return apply_primitive(op, inputs, attrs, tape=tape)


def _arr(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def fanin_uniform(rng, shape, fan_in, gain=1.0):
    """Scaled-uniform fan-in init: variance gain^2 * 2/fan_in (uniform bound
    gain * sqrt(6/fan_in)). The default preserves activation scale through
    relu layers; gain 1/sqrt(2) suits the sigmoid/tanh gate projection."""
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class EncoderConfig:
    """conv_specs: ((filters, kernel, stride), ...); may be empty, in which
    case the encoder is just flatten + FC and the "feature maps" exposed for
    feature control are the observation channels themselves."""

    conv_specs: tuple = ((8, 3, 1), (16, 3, 2))
    fc_units: int = 64
    input_shape: tuple = (3, 12, 12)

    def __post_init__(self):
        if self.fc_units < 1:
            raise ValueError("fc_units must be positive")
        if len(self.input_shape) != 3:
            raise ValueError(f"input_shape must be (channels, H, W), "
                             f"got {self.input_shape}")
        c, h, w = self.input_shape
        for f, k, s in self.conv_specs:
            h = (h - k) // s + 1
            w = (w - k) // s + 1
            if h < 1 or w < 1 or f < 1 or k < 1 or s < 1:
                raise ValueError(
                    f"conv spec ({f},{k},{s}) produces empty output "
                    f"({h}x{w}) for input {self.input_shape}")

    @property
    def feature_shape(self):
        c, h, w = self.input_shape
        for f, k, s in self.conv_specs:
            c = f
            h = (h - k) // s + 1
            w = (w - k) // s + 1
        return (c, h, w)

    @property
    def flat_features(self):
        c, h, w = self.feature_shape
        return c * h * w

    @classmethod
    def paper_scale(cls, input_shape=(1, 84, 84)):
        return cls(conv_specs=((16, 8, 4), (32, 4, 2)), fc_units=256,
                   input_shape=input_shape)

    @classmethod
    def desk_scale(cls, input_shape=(3, 12, 12), fc_units=64):
        return cls(conv_specs=((8, 3, 1), (16, 3, 2)), fc_units=fc_units,
                   input_shape=input_shape)

    @classmethod
    def flat(cls, input_shape, fc_units=32):
        return cls(conv_specs=(), fc_units=fc_units, input_shape=input_shape)


class Encoder:
    """Convolutions + FC, every layer followed by ReLU. The post-ReLU output
    of the last conv layer is exposed as the feature maps used by feature
    control."""

    def __init__(self, cfg, rng, prefix):
        self.cfg = cfg
        self.prefix = prefix
        self.params = {}
        c = cfg.input_shape[0]
        for i, (f, k, s) in enumerate(cfg.conv_specs):
            fan = c * k * k
            self._add(f"conv{i}/w", fanin_uniform(rng, (f, c, k, k), fan))
            self._add(f"conv{i}/b", np.zeros(f))
            c = f
        self._add("fc/w", fanin_uniform(rng, (cfg.flat_features, cfg.fc_units),
                                        cfg.flat_features))
        self._add("fc/b", np.zeros(cfg.fc_units))

    def _add(self, name, data):
        full = f"{self.prefix}/{name}"
        self.params[full] = Tensor(data, name=full)

    def _p(self, name):
        return self.params[f"{self.prefix}/{name}"]

    def forward(self, tape, obs):
        """obs: (C,H,W) or batched (T,C,H,W). Returns (feature maps, fc out)."""
        if tape is None:
            return self._forward_fast(obs)
        x = obs if isinstance(obs, Tensor) else Tensor(obs)
        batched = x.data.ndim == 4
        expect = self.cfg.input_shape
        got = x.data.shape[1:] if batched else x.data.shape
        if tuple(got) != tuple(expect):
            raise ShapeMismatchError(
                f"encoder {self.prefix}: observation shape {got} != {expect}")
        for i, (f, k, s) in enumerate(self.cfg.conv_specs):
            x = _ap(tape, "conv2d", x, self._p(f"conv{i}/w"),
                    self._p(f"conv{i}/b"), stride=s)
            x = _ap(tape, "relu", x)
        feats = x
        flat_shape = ((x.data.shape[0], self.cfg.flat_features) if batched
                      else (self.cfg.flat_features,))
        x = _ap(tape, "reshape", x, shape=flat_shape)
        x = _ap(tape, "matmul", x, self._p("fc/w"))
        x = _ap(tape, "add", x, self._p("fc/b"))
        fc = _ap(tape, "relu", x)
        return feats, fc

    def _forward_fast(self, obs):
        # acting-path twin of forward: the same tensor-op helpers on raw
        # arrays, so values are bit-identical without graph bookkeeping
        x = _arr(obs)
        batched = x.ndim == 4
        expect = self.cfg.input_shape
        got = x.shape[1:] if batched else x.shape
        if tuple(got) != tuple(expect):
            raise ShapeMismatchError(
                f"encoder {self.prefix}: observation shape {got} != {expect}")
        for i, (f, k, s) in enumerate(self.cfg.conv_specs):
            x = _fw_conv2d([x, self._p(f"conv{i}/w").data,
                            self._p(f"conv{i}/b").data], {"stride": s})
            x = np.maximum(x, 0.0)
        feats = x
        flat_shape = ((x.shape[0], self.cfg.flat_features) if batched
                      else (self.cfg.flat_features,))
        z = x.reshape(flat_shape) @ self._p("fc/w").data
        fc = np.maximum(z + self._p("fc/b").data, 0.0)
        return Tensor(feats), Tensor(fc)


class RecurrentCore:
    """Single LSTM cell. Input and recurrent weights are separate so losses
    can project a whole segment's inputs in one matmul; gate order along the
    4H axis is (input, forget, cell, output)."""

    def __init__(self, input_width, hidden_units, rng, prefix):
        self.input_width = input_width
        self.hidden_units = hidden_units
        self.prefix = prefix
        h = hidden_units
        wh = np.zeros((h, 4 * h))
        for g in range(4):
            wh[:, g * h:(g + 1) * h] = orthogonal(rng, h)
        self.params = {
            f"{prefix}/wx": Tensor(fanin_uniform(rng, (input_width, 4 * h),
                                                 input_width,
                                                 gain=1.0 / np.sqrt(2.0)),
                                   name=f"{prefix}/wx"),
            f"{prefix}/wh": Tensor(wh, name=f"{prefix}/wh"),
            f"{prefix}/b": Tensor(np.zeros(4 * h), name=f"{prefix}/b"),
        }

    def zero_state(self):
        h = self.hidden_units
        return (Tensor(np.zeros(h)), Tensor(np.zeros(h)))

    def project_input(self, tape, x):
        """x @ wx for a single step (I,) or a whole segment (T, I)."""
        width = x.data.shape[-1]
        if width != self.input_width:
            raise ShapeMismatchError(
                f"core {self.prefix}: input width {width} != {self.input_width}")
        return _ap(tape, "matmul", x, self.params[f"{self.prefix}/wx"])

    def step_from_projection(self, tape, xz, state):
        """One cell update given xz = x @ wx for this step."""
        if tape is None:
            return self._step_fast(_arr(xz), state)
        h_prev, c_prev = state
        n = self.hidden_units
        z = _ap(tape, "matmul", h_prev, self.params[f"{self.prefix}/wh"])
        z = _ap(tape, "add", z, xz)
        z = _ap(tape, "add", z, self.params[f"{self.prefix}/b"])
        gi = _ap(tape, "sigmoid", _ap(tape, "slice", z, start=0, stop=n))
        gf = _ap(tape, "sigmoid", _ap(tape, "slice", z, start=n, stop=2 * n))
        gg = _ap(tape, "tanh", _ap(tape, "slice", z, start=2 * n, stop=3 * n))
        go = _ap(tape, "sigmoid", _ap(tape, "slice", z, start=3 * n, stop=4 * n))
        c = _ap(tape, "add", _ap(tape, "mul", gf, c_prev), _ap(tape, "mul", gi, gg))
        h = _ap(tape, "mul", go, _ap(tape, "tanh", c))
        return h, (h, c)

    def _step_fast(self, xz, state):
        # acting-path twin of step_from_projection; operation order matches
        # the taped version exactly so values are bit-identical
        h_prev, c_prev = _arr(state[0]), _arr(state[1])
        n = self.hidden_units
        z = (h_prev @ self.params[f"{self.prefix}/wh"].data + xz) \
            + self.params[f"{self.prefix}/b"].data
        gi = _fw_sigmoid([z[:n]], {})
        gf = _fw_sigmoid([z[n:2 * n]], {})
        gg = np.tanh(z[2 * n:3 * n])
        go = _fw_sigmoid([z[3 * n:4 * n]], {})
        c = gf * c_prev + gi * gg
        h = Tensor(go * np.tanh(c))
        return h, (h, Tensor(c))

    def step(self, tape, x, state):
        if tape is None:
            xd = _arr(x)
            if xd.shape[-1] != self.input_width:
                raise ShapeMismatchError(
                    f"core {self.prefix}: input width {xd.shape[-1]} != "
                    f"{self.input_width}")
            return self._step_fast(xd @ self.params[f"{self.prefix}/wx"].data,
                                   state)
        x = x if isinstance(x, Tensor) else Tensor(x)
        return self.step_from_projection(tape, self.project_input(tape, x), state)


class ActorCriticHeads:
    """Linear policy and value heads, zero-initialized so a fresh network
    gives a uniform policy and zero values."""

    def __init__(self, hidden_units, out_dim, prefix):
        self.out_dim = out_dim
        self.prefix = prefix
        self.params = {
            f"{prefix}/actor/w": Tensor(np.zeros((hidden_units, out_dim)),
                                        name=f"{prefix}/actor/w"),
            f"{prefix}/actor/b": Tensor(np.zeros(out_dim), name=f"{prefix}/actor/b"),
            f"{prefix}/critic/w": Tensor(np.zeros((hidden_units, 1)),
                                         name=f"{prefix}/critic/w"),
            f"{prefix}/critic/b": Tensor(np.zeros(1), name=f"{prefix}/critic/b"),
        }

    def forward(self, tape, h):
        """h: (H,) -> probs (A,), value (1,). h: (T,H) -> (T,A), (T,)."""
        if tape is None:
            hd = _arr(h)
            p = self.params
            probs = _fw_softmax(
                [hd @ p[f"{self.prefix}/actor/w"].data
                 + p[f"{self.prefix}/actor/b"].data], {"axis": -1})
            value = (hd @ p[f"{self.prefix}/critic/w"].data
                     + p[f"{self.prefix}/critic/b"].data)
            if hd.ndim == 2:
                value = value.reshape(hd.shape[0])
            return Tensor(probs), Tensor(value)
        p = self.params
        logits = _ap(tape, "add",
                     _ap(tape, "matmul", h, p[f"{self.prefix}/actor/w"]),
                     p[f"{self.prefix}/actor/b"])
        probs = _ap(tape, "softmax", logits, axis=-1)
        value = _ap(tape, "add",
                    _ap(tape, "matmul", h, p[f"{self.prefix}/critic/w"]),
                    p[f"{self.prefix}/critic/b"])
        if h.data.ndim == 2:
            value = _ap(tape, "reshape", value, shape=(h.data.shape[0],))
        return probs, value


class WorkerNet:
    """Behavior policy: encoder output concatenated with the subgoal one-hot
    block feeds the LSTM; heads emit the action distribution and V(s)."""

    def __init__(self, enc_cfg, hidden_units, subgoal_width, num_actions,
                 rng, prefix="worker"):
        self.prefix = prefix
        self.subgoal_width = subgoal_width
        self.num_actions = num_actions
        self.encoder = Encoder(enc_cfg, rng, f"{prefix}/enc")
        self.core = RecurrentCore(enc_cfg.fc_units + subgoal_width,
                                  hidden_units, rng, f"{prefix}/core")
        self.heads = ActorCriticHeads(hidden_units, num_actions, prefix)

    def parameters(self):
        return {**self.encoder.params, **self.core.params, **self.heads.params}

    def load_state(self, state):
        for name, t in self.parameters().items():
            np.copyto(t.data, state[name])

    def zero_state(self):
        return self.core.zero_state()

    def step_from_enc(self, tape, fc_out, subgoal_vec, state):
        sgd = _arr(subgoal_vec)
        if sgd.shape != (self.subgoal_width,):
            raise ShapeMismatchError(
                f"worker: subgoal block has length {sgd.shape}, "
                f"expected ({self.subgoal_width},)")
        if tape is None:
            x = np.concatenate((_arr(fc_out), sgd))
        else:
            sg = (subgoal_vec if isinstance(subgoal_vec, Tensor)
                  else Tensor(subgoal_vec))
            x = _ap(tape, "concat", fc_out, sg)
        h, new_state = self.core.step(tape, x, state)
        probs, value = self.heads.forward(tape, h)
        return probs, value, new_state

    def forward(self, tape, obs, subgoal_vec, state):
        """Returns (action distribution, value, new state, feature maps)."""
        feats, fc = self.encoder.forward(tape, obs)
        probs, value, new_state = self.step_from_enc(tape, fc, subgoal_vec, state)
        return probs, value, new_state, feats


class GoalPolicy:
    """One Manager head: an independent actor-critic over a single subgoal
    space. Its observation is the frame plus the previous extrinsic reward
    and previous action (one-hot), merged at the LSTM input."""

    def __init__(self, kind, space, enc_cfg, hidden_units, num_actions,
                 rng, prefix=None):
        self.kind = kind
        self.space = space
        self.num_actions = num_actions
        self.prefix = prefix or f"goal_{kind}"
        self.encoder = Encoder(enc_cfg, rng, f"{self.prefix}/enc")
        self.core = RecurrentCore(enc_cfg.fc_units + num_actions + 1,
                                  hidden_units, rng, f"{self.prefix}/core")
        self.heads = ActorCriticHeads(hidden_units, space, self.prefix)

    def parameters(self):
        return {**self.encoder.params, **self.core.params, **self.heads.params}

    def load_state(self, state):
        for name, t in self.parameters().items():
            np.copyto(t.data, state[name])

    def zero_state(self):
        return self.core.zero_state()

    def step_from_enc(self, tape, fc_out, prev_reward, prev_action_onehot, state):
        extra = np.concatenate([np.asarray(prev_action_onehot, dtype=np.float64),
                                [float(prev_reward)]])
        if tape is None:
            x = np.concatenate((_arr(fc_out), extra))
        else:
            x = _ap(tape, "concat", fc_out, Tensor(extra))
        h, new_state = self.core.step(tape, x, state)
        probs, value = self.heads.forward(tape, h)
        return probs, value, new_state

    def forward(self, tape, obs, prev_reward, prev_action_onehot, state):
        _, fc = self.encoder.forward(tape, obs)
        return self.step_from_enc(tape, fc, prev_reward, prev_action_onehot, state)


@dataclass
class ManagerObservation:
    """What every goal policy sees: x_t = (s_t, prev extrinsic reward,
    prev action one-hot); prev fields are zero at episode start."""

    observation: np.ndarray
    prev_extrinsic_reward: float
    prev_action: np.ndarray


# Spec-shaped functional entry points over the class methods.

def encoder_forward(encoder, obs, tape=None):
    return encoder.forward(tape, obs)


def recurrent_step(core, x, state, tape=None):
    return core.step(tape, x, state)


def worker_forward(net, obs, subgoal_onehots, state, tape=None):
    probs, value, new_state, _ = net.forward(tape, obs, subgoal_onehots, state)
    return probs, value, new_state


def goal_policy_forward(gp, mobs, state, tape=None):
    return gp.forward(tape, mobs.observation, mobs.prev_extrinsic_reward,
                      mobs.prev_action, state)
