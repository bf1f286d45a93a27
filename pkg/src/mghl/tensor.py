"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is double precision and CPU-only. Networks here are tiny, so the
design optimizes for checkable correctness: a tape records primitive
applications in topological order, keeps full references to input/output
arrays, and replays them backwards exactly once. Calling a primitive without
a tape runs the same forward math with no recording, which is the fast path
used while acting in an environment.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when a primitive's input shapes are incompatible."""


class UnknownPrimitiveError(ValueError):
    """Raised for an op name outside the supported primitive set."""


class TapeConsumedError(RuntimeError):
    """Raised when backward is called twice on the same tape."""


class Tensor:
    """A named ndarray plus the tape bookkeeping needed for backprop."""

    __slots__ = ("data", "name", "node_id", "tape")

    def __init__(self, data, name=None):
        if type(data) is np.ndarray and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.name = name
        self.node_id = None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


class _Node:
    __slots__ = ("op", "input_ids", "attrs", "in_data", "out")

    def __init__(self, op, input_ids, attrs, in_data, out):
        self.op = op
        self.input_ids = input_ids
        self.attrs = attrs
        self.in_data = in_data
        self.out = out


def _require(cond, op, msg):
    if not cond:
        raise ShapeMismatchError(f"{op}: {msg}")


# ---------------------------------------------------------------------------
# forward implementations; each returns the output ndarray


def _fw_matmul(ins, attrs):
    a, b = ins
    _require(a.ndim in (1, 2) and b.ndim in (1, 2) and not (a.ndim == b.ndim == 1),
             "matmul", f"rank combination {a.shape} @ {b.shape} unsupported")
    ka = a.shape[-1]
    kb = b.shape[0]
    _require(ka == kb, "matmul", f"inner dims differ, {a.shape} @ {b.shape}")
    return a @ b


def _conv_out_hw(h, w, kh, kw, stride, op):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    _require(h >= kh and w >= kw and oh >= 1 and ow >= 1, op,
             f"kernel {kh}x{kw} stride {stride} does not fit input {h}x{w}")
    return oh, ow


_WINDOW_INDEX_CACHE = {}


def _window_index(c, h, w, kh, kw, stride):
    # flat gather index of shape (oh, ow, C, kh, kw) into a flattened (C,H,W)
    key = (c, h, w, kh, kw, stride)
    idx = _WINDOW_INDEX_CACHE.get(key)
    if idx is None:
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        rows = np.arange(oh) * stride
        cols = np.arange(ow) * stride
        idx = (np.arange(c)[None, None, :, None, None] * (h * w)
               + (rows[:, None, None, None, None] + np.arange(kh)[None, None, None, :, None]) * w
               + (cols[None, :, None, None, None] + np.arange(kw)[None, None, None, None, :]))
        idx = np.ascontiguousarray(idx)
        _WINDOW_INDEX_CACHE[key] = idx
    return idx


def _conv_windows(x, kh, kw, stride):
    # x: (..., C, H, W) -> (..., oh, ow, C, kh, kw), flattenable for matmul
    c, h, w = x.shape[-3:]
    idx = _window_index(c, h, w, kh, kw, stride)
    if x.ndim == 3:
        return x.reshape(-1)[idx]
    flat = x.reshape(x.shape[0], -1)[:, idx.reshape(-1)]
    return flat.reshape((x.shape[0],) + idx.shape)


def _fw_conv2d(ins, attrs):
    x = ins[0]
    w = ins[1]
    b = ins[2] if len(ins) == 3 else None
    stride = int(attrs["stride"])
    _require(stride >= 1, "conv2d", f"stride {stride} must be >= 1")
    _require(x.ndim in (3, 4), "conv2d", f"input must be (C,H,W) or (N,C,H,W), got {x.shape}")
    _require(w.ndim == 4, "conv2d", f"weight must be (F,C,kh,kw), got {w.shape}")
    f, c, kh, kw = w.shape
    _require(x.shape[-3] == c, "conv2d",
             f"input channels {x.shape[-3]} != weight channels {c}")
    if b is not None:
        _require(b.shape == (f,), "conv2d", f"bias shape {b.shape} != ({f},)")
    oh, ow = _conv_out_hw(x.shape[-2], x.shape[-1], kh, kw, stride, "conv2d")
    win = _conv_windows(x, kh, kw, stride)
    flat = win.reshape(-1, c * kh * kw)
    out = flat @ w.reshape(f, -1).T  # (N*oh*ow, F)
    if x.ndim == 3:
        out = np.moveaxis(out.reshape(oh, ow, f), 2, 0)
    else:
        out = np.moveaxis(out.reshape(x.shape[0], oh, ow, f), 3, 1)
    if b is not None:
        out = out + (b[:, None, None] if x.ndim == 3 else b[None, :, None, None])
    return np.ascontiguousarray(out)


def _broadcastable(sa, sb):
    # identical, scalar against anything, or one shape is the other's
    # trailing suffix (bias-style adds on batched activations)
    if sa == sb or int(np.prod(sa)) == 1 or int(np.prod(sb)) == 1:
        return True
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    return len(small) < len(big) and big[len(big) - len(small):] == small


def _fw_add(ins, attrs):
    a, b = ins
    _require(_broadcastable(a.shape, b.shape), "add",
             f"shapes {a.shape} and {b.shape} differ and neither is a scalar")
    return a + b


def _fw_mul(ins, attrs):
    a, b = ins
    _require(_broadcastable(a.shape, b.shape), "mul",
             f"shapes {a.shape} and {b.shape} differ and neither is a scalar")
    return a * b


def _fw_relu(ins, attrs):
    return np.maximum(ins[0], 0.0)


def _fw_sigmoid(ins, attrs):
    # exp(-|x|) never overflows; both branches reduce to the textbook
    # formula evaluated in its numerically stable orientation
    x = ins[0]
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def _fw_tanh(ins, attrs):
    return np.tanh(ins[0])


def _fw_softmax(ins, attrs):
    x = ins[0]
    axis = int(attrs.get("axis", -1))
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _fw_log(ins, attrs):
    return np.log(ins[0])


def _fw_sum(ins, attrs):
    return np.asarray(ins[0].sum())


def _fw_mean(ins, attrs):
    return np.asarray(ins[0].mean())


def _fw_concat(ins, attrs):
    axis = int(attrs.get("axis", 0))
    _require(len(ins) >= 1, "concat", "needs at least one input")
    nd = ins[0].ndim
    _require(nd >= 1, "concat", "inputs must have rank >= 1")
    for a in ins[1:]:
        _require(a.ndim == nd, "concat", f"rank mismatch {a.ndim} vs {nd}")
        _require(a.shape[:axis] + a.shape[axis + 1:] ==
                 ins[0].shape[:axis] + ins[0].shape[axis + 1:],
                 "concat", f"non-axis dims differ: {a.shape} vs {ins[0].shape}")
    return np.concatenate(ins, axis=axis)


def _fw_one_hot(ins, attrs):
    index = int(attrs["index"])
    size = int(attrs["size"])
    _require(0 <= index < size, "one_hot", f"index {index} out of range [0,{size})")
    out = np.zeros(size)
    out[index] = 1.0
    return out


def _fw_slice(ins, attrs):
    x = ins[0]
    axis = int(attrs.get("axis", 0))
    start = int(attrs["start"])
    stop = int(attrs["stop"])
    _require(0 <= axis < x.ndim, "slice", f"axis {axis} out of range for rank {x.ndim}")
    _require(0 <= start < stop <= x.shape[axis], "slice",
             f"bounds [{start},{stop}) invalid for dim {x.shape[axis]}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    return np.ascontiguousarray(x[tuple(sl)])


def _fw_reshape(ins, attrs):
    x = ins[0]
    shape = tuple(int(d) for d in attrs["shape"])
    _require(int(np.prod(shape)) == x.size, "reshape",
             f"cannot reshape size {x.size} into {shape}")
    return np.ascontiguousarray(x.reshape(shape))


# ---------------------------------------------------------------------------
# backward implementations; accumulate into grads[input_id]


def _acc(grads, node_ids, idx, val):
    nid = node_ids[idx]
    if grads[nid] is None:
        grads[nid] = np.zeros(val.shape) if np.ndim(val) else np.zeros(())
    grads[nid] += val


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.asarray(g.sum()).reshape(shape)
    return g.sum(axis=tuple(range(g.ndim - len(shape))))


def _bw_matmul(node, g, grads):
    a, b = node.in_data
    if a.ndim == 2 and b.ndim == 2:
        _acc(grads, node.input_ids, 0, g @ b.T)
        _acc(grads, node.input_ids, 1, a.T @ g)
    elif a.ndim == 1:
        _acc(grads, node.input_ids, 0, b @ g)
        _acc(grads, node.input_ids, 1, a[:, None] * g)
    else:
        _acc(grads, node.input_ids, 0, g[:, None] * b)
        _acc(grads, node.input_ids, 1, a.T @ g)


def _bw_conv2d(node, g, grads):
    x = node.in_data[0]
    w = node.in_data[1]
    stride = int(node.attrs["stride"])
    f, c, kh, kw = w.shape
    batched = x.ndim == 4

    win = _conv_windows(x, kh, kw, stride)
    flat = win.reshape(-1, c * kh * kw)
    if batched:
        g_flat = np.moveaxis(g, 1, 3).reshape(-1, f)
    else:
        g_flat = np.moveaxis(g, 0, 2).reshape(-1, f)
    _acc(grads, node.input_ids, 1, (g_flat.T @ flat).reshape(f, c, kh, kw))

    # one matmul yields every window's input gradient; bincount scatter-adds
    # the overlapping windows back onto the input grid
    dwin = g_flat @ w.reshape(f, -1)  # (N*oh*ow, C*kh*kw)
    idx = _window_index(c, x.shape[-2], x.shape[-1], kh, kw, stride)
    if batched:
        n = x.shape[0]
        per = c * x.shape[-2] * x.shape[-1]
        full = (np.arange(n) * per)[:, None] + idx.reshape(1, -1)
        gx = np.bincount(full.reshape(-1), weights=dwin.reshape(-1),
                         minlength=n * per)
    else:
        gx = np.bincount(idx.reshape(-1), weights=dwin.reshape(-1),
                         minlength=x.size)
    _acc(grads, node.input_ids, 0, gx.reshape(x.shape))

    if len(node.in_data) == 3:
        axes = (0, 2, 3) if batched else (1, 2)
        _acc(grads, node.input_ids, 2, g.sum(axis=axes))


def _bw_add(node, g, grads):
    a, b = node.in_data
    _acc(grads, node.input_ids, 0, _unbroadcast(g, a.shape))
    _acc(grads, node.input_ids, 1, _unbroadcast(g, b.shape))


def _bw_mul(node, g, grads):
    a, b = node.in_data
    _acc(grads, node.input_ids, 0, _unbroadcast(g * b, a.shape))
    _acc(grads, node.input_ids, 1, _unbroadcast(g * a, b.shape))


def _bw_relu(node, g, grads):
    _acc(grads, node.input_ids, 0, g * (node.in_data[0] > 0))


def _bw_sigmoid(node, g, grads):
    y = node.out
    _acc(grads, node.input_ids, 0, g * y * (1.0 - y))


def _bw_tanh(node, g, grads):
    y = node.out
    _acc(grads, node.input_ids, 0, g * (1.0 - y * y))


def _bw_softmax(node, g, grads):
    y = node.out
    axis = int(node.attrs.get("axis", -1))
    dot = np.sum(g * y, axis=axis, keepdims=True)
    _acc(grads, node.input_ids, 0, y * (g - dot))


def _bw_log(node, g, grads):
    _acc(grads, node.input_ids, 0, g / node.in_data[0])


def _bw_sum(node, g, grads):
    x = node.in_data[0]
    _acc(grads, node.input_ids, 0, np.full(x.shape, float(g)))


def _bw_mean(node, g, grads):
    x = node.in_data[0]
    _acc(grads, node.input_ids, 0, np.full(x.shape, float(g) / x.size))


def _bw_concat(node, g, grads):
    axis = int(node.attrs.get("axis", 0))
    offset = 0
    for idx, a in enumerate(node.in_data):
        n = a.shape[axis]
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(offset, offset + n)
        _acc(grads, node.input_ids, idx, g[tuple(sl)])
        offset += n


def _bw_one_hot(node, g, grads):
    pass


def _bw_slice(node, g, grads):
    x = node.in_data[0]
    nid = node.input_ids[0]
    if grads[nid] is None:
        grads[nid] = np.zeros(x.shape)
    axis = int(node.attrs.get("axis", 0))
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(int(node.attrs["start"]), int(node.attrs["stop"]))
    grads[nid][tuple(sl)] += g


def _bw_reshape(node, g, grads):
    _acc(grads, node.input_ids, 0, g.reshape(node.in_data[0].shape))


_FORWARD = {
    "matmul": _fw_matmul,
    "conv2d": _fw_conv2d,
    "add": _fw_add,
    "mul": _fw_mul,
    "relu": _fw_relu,
    "sigmoid": _fw_sigmoid,
    "tanh": _fw_tanh,
    "softmax": _fw_softmax,
    "log": _fw_log,
    "sum": _fw_sum,
    "mean": _fw_mean,
    "concat": _fw_concat,
    "one_hot": _fw_one_hot,
    "slice": _fw_slice,
    "reshape": _fw_reshape,
}

_BACKWARD = {
    "matmul": _bw_matmul,
    "conv2d": _bw_conv2d,
    "add": _bw_add,
    "mul": _bw_mul,
    "relu": _bw_relu,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "softmax": _bw_softmax,
    "log": _bw_log,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "concat": _bw_concat,
    "one_hot": _bw_one_hot,
    "slice": _bw_slice,
    "reshape": _bw_reshape,
}

_ARITY = {
    "matmul": (2, 2),
    "conv2d": (2, 3),
    "add": (2, 2),
    "mul": (2, 2),
    "relu": (1, 1),
    "sigmoid": (1, 1),
    "tanh": (1, 1),
    "softmax": (1, 1),
    "log": (1, 1),
    "sum": (1, 1),
    "mean": (1, 1),
    "concat": (1, None),
    "one_hot": (0, 0),
    "slice": (1, 1),
    "reshape": (1, 1),
}


def apply_primitive(op, inputs, attrs=None, tape=None):
    """Run one primitive. With a tape the application is recorded for
    backward; without one this is a plain numpy computation."""
    fw = _FORWARD.get(op)
    if fw is None:
        raise UnknownPrimitiveError(
            f"unknown primitive {op!r}; supported: {sorted(_FORWARD)}")
    lo, hi = _ARITY[op]
    n = len(inputs)
    if n < lo or (hi is not None and n > hi):
        raise ShapeMismatchError(f"{op}: takes {lo}..{hi if hi is not None else 'n'}"
                                 f" inputs, got {n}")
    attrs = attrs or {}
    in_data = tuple(t.data for t in inputs)
    out_data = fw(in_data, attrs)
    out = Tensor(out_data)
    if tape is not None:
        tape._record(op, inputs, attrs, in_data, out)
    return out


class GradientTape:
    """Append-only record of primitive applications, consumed by one
    backward pass. Tensors created on other tapes (or none) are adopted as
    leaves on first use here, so parameter tensors can be reused across
    segments."""

    def __init__(self):
        self._nodes = []
        self._watched = {}  # node id -> parameter name
        self._consumed = False

    def _adopt(self, t):
        if t.tape is self and t.node_id is not None:
            return t.node_id
        nid = len(self._nodes)
        self._nodes.append(_Node("leaf", (), {}, (), t.data))
        t.tape = self
        t.node_id = nid
        return nid

    def _record(self, op, inputs, attrs, in_data, out):
        if self._consumed:
            raise TapeConsumedError("tape already consumed by backward")
        ids = tuple(self._adopt(t) for t in inputs)
        nid = len(self._nodes)
        self._nodes.append(_Node(op, ids, attrs, in_data, out.data))
        out.tape = self
        out.node_id = nid

    def apply(self, op, *inputs, **attrs):
        return apply_primitive(op, inputs, attrs, tape=self)

    def watch(self, tensor):
        """Mark a named tensor as a parameter whose gradient backward returns."""
        if tensor.name is None:
            raise ValueError("watch requires a named tensor")
        nid = self._adopt(tensor)
        self._watched[nid] = tensor.name

    def backward(self, root):
        """Reverse sweep from a scalar root. Returns {param name: gradient},
        with exact zeros for watched parameters the root does not touch."""
        if self._consumed:
            raise TapeConsumedError("tape already consumed by backward")
        if root.tape is not self or root.node_id is None:
            raise ValueError("backward root was not recorded on this tape")
        if root.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.shape}")
        self._consumed = True
        grads = [None] * len(self._nodes)
        grads[root.node_id] = np.ones(root.data.shape)
        for nid in range(root.node_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self._nodes[nid]
            if node.op == "leaf":
                continue
            _BACKWARD[node.op](node, g, grads)
        out = {}
        for nid, name in self._watched.items():
            g = grads[nid]
            out[name] = np.zeros(self._nodes[nid].out.shape) if g is None else g
        return out

    def watch_all(self, params):
        for t in params.values():
            self.watch(t)

    @property
    def num_nodes(self):
        return len(self._nodes)


def gradient_check(f, point, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    f(tape, x) must build and return a scalar tensor; it is re-invoked on
    fresh tapes for every probe, so it must be deterministic in x.
    """
    name = point.name or "gradient_check_point"
    base = np.array(point.data, dtype=np.float64)

    tape = GradientTape()
    x = Tensor(base.copy(), name=name)
    tape.watch(x)
    analytic = tape.backward(f(tape, x))[name]

    def value_at(arr):
        out = f(GradientTape(), Tensor(arr, name=name))
        v = float(out.data)
        if not np.isfinite(v):
            raise FloatingPointError("non-finite value during gradient check")
        return v

    worst = 0.0
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = value_at(base)
        flat[i] = orig - eps
        lo = value_at(base)
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * eps)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
