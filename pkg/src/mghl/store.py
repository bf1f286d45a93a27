"""Shared parameter store with per-tensor atomic accumulate-apply.

Two backends behind one interface: plain ndarrays for inline (single-actor,
deterministic) training, and multiprocessing shared memory for parallel
actors forked from the owning process. Either way, every parameter tensor
carries its own optimizer accumulator and lock; snapshot reads and updates
are atomic per tensor, never across tensors (stale-but-untorn semantics).

The optimizer is a decayed squared-gradient accumulator:
    acc <- decay * acc + (1 - decay) * g^2
    p   <- p - lr * g / sqrt(acc + eps)
Exact-zero gradients skip the update entirely so that a no-op really is a
no-op (the accumulator does not decay).
"""

from __future__ import annotations

import contextlib
import multiprocessing as mp

import numpy as np


class _InlineSlot:
    __slots__ = ("param", "acc", "lock")

    def __init__(self, init):
        self.param = np.array(init, dtype=np.float64)
        self.acc = np.zeros_like(self.param)
        self.lock = contextlib.nullcontext()


class _SharedSlot:
    __slots__ = ("param", "acc", "lock", "_buf")

    def __init__(self, init, ctx):
        flat = np.asarray(init, dtype=np.float64).reshape(-1)
        buf = ctx.Array("d", 2 * flat.size, lock=True)
        view = np.frombuffer(buf.get_obj(), dtype=np.float64)
        self.param = view[:flat.size].reshape(init.shape)
        self.acc = view[flat.size:].reshape(init.shape)
        self.param[...] = init
        self.lock = buf.get_lock()
        self._buf = buf


class SharedParamStore:
    """Named parameter tensors + optimizer statistics + global counters."""

    def __init__(self, init_params, decay=0.99, eps=1e-8, shared=False):
        self.decay = float(decay)
        self.eps = float(eps)
        self.shared = bool(shared)
        ctx = mp.get_context("fork") if shared else None
        self._slots = {}
        for name, value in init_params.items():
            data = value.data if hasattr(value, "data") else np.asarray(value)
            self._slots[name] = (_SharedSlot(data, ctx) if shared
                                 else _InlineSlot(data))
        if shared:
            self._updates = ctx.Value("q", 0)
            self._env_steps = ctx.Value("q", 0)
        else:
            self._updates = None
            self._env_steps = None
            self._updates_inline = 0
            self._env_steps_inline = 0

    @property
    def names(self):
        return list(self._slots)

    # -- counters ----------------------------------------------------------

    @property
    def update_count(self):
        if self.shared:
            return int(self._updates.value)
        return self._updates_inline

    @property
    def env_steps(self):
        if self.shared:
            return int(self._env_steps.value)
        return self._env_steps_inline

    def add_env_steps(self, n=1):
        if self.shared:
            with self._env_steps.get_lock():
                self._env_steps.value += n
                return int(self._env_steps.value)
        self._env_steps_inline += n
        return self._env_steps_inline

    # -- parameter access ---------------------------------------------------

    def snapshot(self, names=None):
        """Copy of each tensor; consistent per tensor (never torn)."""
        out = {}
        for name in (names if names is not None else self._slots):
            slot = self._slots[name]
            with slot.lock:
                out[name] = slot.param.copy()
        return out

    def apply_gradients(self, grads, lr, clip=None):
        """Global-norm clip, then atomic per-tensor optimizer updates.
        Returns the total update count."""
        for name in grads:
            if name not in self._slots:
                raise KeyError(f"gradient for unknown parameter {name!r}")
        total_sq = 0.0
        for g in grads.values():
            total_sq += float(np.sum(np.asarray(g) ** 2))
        norm = np.sqrt(total_sq)
        scale = 1.0
        if clip is not None and norm > clip and norm > 0:
            scale = clip / norm
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            if not np.any(g):
                continue  # exact no-op: skip so accumulators do not decay
            slot = self._slots[name]
            step = g * scale
            with slot.lock:
                slot.acc[...] = self.decay * slot.acc + (1 - self.decay) * step * step
                slot.param[...] = slot.param - lr * step / np.sqrt(slot.acc + self.eps)
        if self.shared:
            with self._updates.get_lock():
                self._updates.value += 1
                return int(self._updates.value)
        self._updates_inline += 1
        return self._updates_inline


def apply_gradients(store, grads, clip, lr):
    return store.apply_gradients(grads, lr, clip=clip)
