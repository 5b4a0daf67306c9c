"""Minimal dense/conv network machinery with explicit backprop and Adam.

Everything runs in float64 numpy on CPU. Layers cache what their backward
pass needs on the instance, so one layer object services one forward/backward
pair at a time (training is single-threaded by contract). Dropout uses the
inverted convention: active passes scale kept activations by 1/(1 - p), so
deterministic inference applies no rescaling.

Forward modes:
  train_stochastic  dropout active (training)
  eval_stochastic   dropout active (MC-dropout inference)
  deterministic     dropout disabled
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MODES = ("train_stochastic", "eval_stochastic", "deterministic")


def derive_rng(*keys: int) -> np.random.Generator:
    """Independent generator for a tuple of integer stream keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True)
class ModelParameters:
    """Ordered named parameter tensors, tagged with their layer group."""

    names: tuple[str, ...]
    groups: tuple[str, ...]
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.groups) == len(self.values)):
            raise ValueError("names, groups, and values must align")
        vals = []
        for v in self.values:
            v = np.asarray(v, dtype=np.float64)
            if not np.isfinite(v).all():
                raise ValueError("parameters must be finite")
            v = v.copy()
            v.setflags(write=False)
            vals.append(v)
        object.__setattr__(self, "values", tuple(vals))

    def value(self, name: str) -> np.ndarray:
        return self.values[self.names.index(name)]

    def group_names(self) -> tuple[str, ...]:
        seen = []
        for g in self.groups:
            if g not in seen:
                seen.append(g)
        return tuple(seen)


class Layer:
    """Base layer; parameterless by default."""

    names: tuple[str, ...] = ()
    group: str = ""

    def param_arrays(self) -> list[np.ndarray]:
        return []

    def grad_arrays(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, mode: str, rng) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, name: str, group: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.names = (f"{name}.W", f"{name}.b")
        self.group = group
        self.W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def param_arrays(self):
        return [self.W, self.b]

    def grad_arrays(self):
        return [self.dW, self.db]

    def forward(self, x, mode, rng):
        self._x = x
        return x @ self.W + self.b

    def backward(self, dout):
        self.dW[...] = self._x.T @ dout
        self.db[...] = dout.sum(axis=0)
        return dout @ self.W.T


class Conv3x3(Layer):
    """3x3 same-padding convolution via im2col; weight shape (c_in * 9, c_out)."""

    def __init__(self, name: str, group: str, c_in: int, c_out: int, rng: np.random.Generator):
        self.names = (f"{name}.W", f"{name}.b")
        self.group = group
        self.c_in = c_in
        self.c_out = c_out
        self.W = rng.normal(0.0, np.sqrt(2.0 / (c_in * 9)), size=(c_in * 9, c_out))
        self.b = np.zeros(c_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._col = None
        self._shape = None

    def param_arrays(self):
        return [self.W, self.b]

    def grad_arrays(self):
        return [self.dW, self.db]

    def forward(self, x, mode, rng):
        n, c, h, w = x.shape
        self._shape = (n, c, h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n, c, h, w, 3, 3)
        col = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)
        self._col = col
        out = col @ self.W + self.b
        return out.reshape(n, h, w, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dout):
        n, c, h, w = self._shape
        dmat = dout.transpose(0, 2, 3, 1).reshape(n * h * w, self.c_out)
        self.dW[...] = self._col.T @ dmat
        self.db[...] = dmat.sum(axis=0)
        dcol = (dmat @ self.W.T).reshape(n, h, w, c, 3, 3).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros((n, c, h + 2, w + 2))
        for di in range(3):
            for dj in range(3):
                dxp[:, :, di : di + h, dj : dj + w] += dcol[:, :, :, :, di, dj]
        return dxp[:, :, 1 : h + 1, 1 : w + 1]


class ReLU(Layer):
    def forward(self, x, mode, rng):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Dropout(Layer):
    def __init__(self, rate: float):
        if not (0.0 <= rate < 1.0):
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, mode, rng):
        if mode == "deterministic" or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; input spatial dims must be even."""

    def forward(self, x, mode, rng):
        n, c, h, w = x.shape
        self._shape = (n, c, h, w)
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h // 2, w // 2, 4
        )
        self._idx = win.argmax(axis=-1)
        return np.take_along_axis(win, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        n, c, h, w = self._shape
        dwin = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(dwin, self._idx[..., None], dout[..., None], axis=-1)
        return (
            dwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )


class Flatten(Layer):
    def forward(self, x, mode, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Network:
    """An ordered layer stack producing (K - 1) head logits."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x: np.ndarray, mode: str, rng=None) -> np.ndarray:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        needs_rng = mode != "deterministic" and any(
            isinstance(l, Dropout) and l.rate > 0 for l in self.layers
        )
        if needs_rng and rng is None:
            raise ValueError("stochastic modes require an rng")
        out = x
        for layer in self.layers:
            out = layer.forward(out, mode, rng)
        return out

    def backward(self, dlogits: np.ndarray):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def param_entries(self) -> list[tuple[str, str, np.ndarray]]:
        out = []
        for layer in self.layers:
            for name, arr in zip(layer.names, layer.param_arrays()):
                out.append((name, layer.group, arr))
        return out

    def grad_entries(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.grad_arrays())
        return out

    def snapshot(self) -> ModelParameters:
        names, groups, values = [], [], []
        for name, group, arr in self.param_entries():
            names.append(name)
            groups.append(group)
            values.append(arr.copy())
        return ModelParameters(tuple(names), tuple(groups), tuple(values))

    def load(self, params: ModelParameters):
        entries = self.param_entries()
        if tuple(n for n, _, _ in entries) != params.names:
            raise ValueError(
                f"parameter names mismatch: network has {[n for n, _, _ in entries]}, "
                f"checkpoint has {list(params.names)}"
            )
        for (_, _, arr), value in zip(entries, params.values):
            if arr.shape != value.shape:
                raise ValueError("parameter shape mismatch")
            arr[...] = value


class Adam:
    """Adam with bias correction; one slot pair per parameter tensor."""

    def __init__(self, shapes: list[tuple], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lrs: list[float]):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v, lr in zip(params, grads, self.m, self.v, lrs):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
