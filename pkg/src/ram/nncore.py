"""Hand-written forward/backward building blocks.

Inputs are either single vectors ``(d,)`` or batches ``(N, d)``; weights are
stored ``(out, in)`` so a layer computes ``y = x @ W.T + b``.  Backward
functions *accumulate* into ``Param.grad`` and return the input gradient.
"""

from __future__ import annotations

import json
from typing import Dict, Iterable

import numpy as np


class DimensionError(ValueError):
    pass


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def linear(name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> Dict[str, Param]:
    return {f"{name}.W": Param(f"{name}.W", glorot(rng, fan_out, fan_in)),
            f"{name}.b": Param(f"{name}.b", np.zeros(fan_out))}


def affine_forward(x, W: Param, b: Param):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise DimensionError(f"affine: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W.value.T + b.value, (x, W, b)


def affine_backward(dy, cache):
    x, W, b = cache
    x2, dy2 = np.atleast_2d(x), np.atleast_2d(dy)
    W.grad += dy2.T @ x2
    b.grad += dy2.sum(axis=0)
    return dy @ W.value


def relu_forward(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0), x


def relu_backward(dy, cache):
    return dy * (cache > 0)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, cache):
    return dy * (1.0 - cache * cache)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits, label):
    """Cross-entropy of ``softmax(logits)`` against ``label``.

    Works on one example (``logits`` of shape ``(C,)`` and an int label) or a
    batch (``(N, C)`` and an int array), returning per-example losses.  The
    gradient with respect to the logits is ``probs - onehot(label)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    label = np.asarray(label)
    c = logits.shape[-1]
    if np.any(label < 0) or np.any(label >= c):
        raise ValueError(f"label out of range 0..{c - 1}")
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, label[..., None], axis=-1)[..., 0] if z.ndim > 1 else z[label]
    loss = logz - picked
    probs = np.exp(z - logz[..., None]) if z.ndim > 1 else np.exp(z - logz)
    return loss, probs


def softmax_ce_backward(probs, label):
    grad = probs.copy()
    if grad.ndim == 1:
        grad[label] -= 1.0
    else:
        grad[np.arange(len(grad)), label] -= 1.0
    return grad


def rnn_cell(g, h_prev, params: Dict[str, Param], prefix: str = "core"):
    """Elman step ``h = relu(h_prev @ Wh.T + g @ Wg.T + b)``; returns ``(h, cache)``."""
    Wh, Wg, b = params[f"{prefix}.Wh"], params[f"{prefix}.Wg"], params[f"{prefix}.b"]
    g, h_prev = np.asarray(g, dtype=np.float64), np.asarray(h_prev, dtype=np.float64)
    if g.shape[-1] != Wg.shape[1] or h_prev.shape[-1] != Wh.shape[1] or Wh.shape[0] != Wg.shape[0]:
        raise DimensionError(f"rnn_cell: g {g.shape}, h {h_prev.shape}, Wg {Wg.shape}, Wh {Wh.shape}")
    pre = h_prev @ Wh.value.T + g @ Wg.value.T + b.value
    h = np.maximum(pre, 0.0)
    return h, (g, h_prev, pre, Wh, Wg, b)


def rnn_cell_backward(dh, cache):
    """Return ``(dg, dh_prev)`` and accumulate the cell's weight gradients."""
    g, h_prev, pre, Wh, Wg, b = cache
    dpre = dh * (pre > 0)
    d2 = np.atleast_2d(dpre)
    Wh.grad += d2.T @ np.atleast_2d(h_prev)
    Wg.grad += d2.T @ np.atleast_2d(g)
    b.grad += d2.sum(axis=0)
    return dpre @ Wg.value, dpre @ Wh.value


def rnn_params(g_dim: int, h_dim: int, rng: np.random.Generator, prefix: str = "core") -> Dict[str, Param]:
    return {f"{prefix}.Wh": Param(f"{prefix}.Wh", glorot(rng, h_dim, h_dim)),
            f"{prefix}.Wg": Param(f"{prefix}.Wg", glorot(rng, h_dim, g_dim)),
            f"{prefix}.b": Param(f"{prefix}.b", np.zeros(h_dim))}


def zero_grads(params: Iterable[Param]):
    for p in params:
        p.zero_grad()


def save_params(path, params: Dict[str, Param], meta: dict | None = None) -> None:
    """Save ``name -> array`` as ``.npz``; arrays round-trip bit-exactly."""
    arrays = {name: p.value for name, p in params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta or {}).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(params, meta)``."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode()) if "__meta__" in data.files else {}
        params = {name: Param(name, data[name].copy()) for name in data.files if name != "__meta__"}
    return params, meta
