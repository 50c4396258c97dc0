"""A small reverse-mode engine for the fixed CM+CNN cascade.

Layers cache what they need during ``forward`` and consume it in ``backward``;
parameter gradients accumulate into ``Tensor.grad``. Activations travel as
plain float64 arrays with a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class MissingCacheError(RuntimeError):
    pass


class Tensor:
    """Parameter array plus its gradient buffer."""

    def __init__(self, data, name: str = ""):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.shape})"


class Layer:
    def params(self) -> list[Tensor]:
        return []

    def _cached(self):
        if self._cache is None:
            raise MissingCacheError(f"{type(self).__name__}.backward called without a forward pass")
        c, self._cache = self._cache, None
        return c


def kaiming(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Dense(Layer):
    """y = x W^T + b with W of shape [out, in]."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, name: str = "dense",
                 gain: float = 1.0):
        # rng=None gives an all-zero layer
        w = gain * kaiming(rng, (n_out, n_in), n_in) if rng is not None else np.zeros((n_out, n_in))
        self.W = Tensor(w, f"{name}.W")
        self.b = Tensor(np.zeros(n_out), f"{name}.b")
        self._cache = None

    def params(self):
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return x @ self.W.data.T + self.b.data

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._cached()
        self.W.grad += dy.T @ x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.data


class Conv1D(Layer):
    """Valid-mode cross-correlation: [B, C, L] -> [B, F, L - k + 1]."""

    def __init__(self, in_channels: int, n_filters: int, kernel: int,
                 rng: np.random.Generator | None = None, name: str = "conv"):
        fan_in = in_channels * kernel
        w = kaiming(rng, (n_filters, in_channels, kernel), fan_in) if rng is not None \
            else np.zeros((n_filters, in_channels, kernel))
        self.W = Tensor(w, f"{name}.W")
        self.b = Tensor(np.zeros(n_filters), f"{name}.b")
        self.kernel = kernel
        self._cache = None

    def params(self):
        return [self.W, self.b]

    def out_len(self, length: int) -> int:
        return length - self.kernel + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, C, L = x.shape
        F, Cw, k = self.W.shape
        if C != Cw:
            raise ValueError(f"conv expects {Cw} input channels, got {C}")
        if L < k:
            raise ValueError(f"input length {L} shorter than kernel {k}")
        Lo = L - k + 1
        # cols[b, t, c*k + j] = x[b, c, t + j]
        cols = sliding_window_view(x, k, axis=2).transpose(0, 2, 1, 3).reshape(B * Lo, C * k)
        y = cols @ self.W.data.reshape(F, C * k).T + self.b.data
        self._cache = (cols, x.shape)
        return y.reshape(B, Lo, F).transpose(0, 2, 1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cols, (B, C, L) = self._cached()
        F, _, k = self.W.shape
        Lo = L - k + 1
        dyf = dy.transpose(0, 2, 1).reshape(B * Lo, F)
        self.W.grad += (dyf.T @ cols).reshape(self.W.shape)
        self.b.grad += dyf.sum(axis=0)
        # tap-major weight layout so each tap's slice is contiguous
        w_tap = self.W.data.transpose(0, 2, 1).reshape(F, k * C)
        dcols = (dyf @ w_tap).reshape(B, Lo, k, C)
        dx = np.zeros((B, L, C))
        for j in range(k):
            dx[:, j:j + Lo, :] += dcols[:, :, j, :]
        return dx.transpose(0, 2, 1)


class MaxPool2(Layer):
    """Non-overlapping max over pairs; an odd trailing sample is dropped."""

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, C, L = x.shape
        if L < 2:
            raise ValueError("max-pool needs length >= 2")
        Lo = L // 2
        left, right = x[:, :, 0:2 * Lo:2], x[:, :, 1:2 * Lo:2]
        second = right > left  # ties go to the first index
        self._cache = (second, x.shape)
        return np.where(second, right, left)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        second, (B, C, L) = self._cached()
        Lo = L // 2
        dx = np.zeros((B, C, L))
        dx[:, :, 0:2 * Lo:2] = np.where(second, 0.0, dy)
        dx[:, :, 1:2 * Lo:2] = np.where(second, dy, 0.0)
        return dx

    @staticmethod
    def out_len(length: int) -> int:
        return length // 2


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._cached()


class Flatten(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cached())


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch.

    Returns ``(loss, probs, dlogits)`` where ``dlogits = (probs - onehot) / B``.
    """
    labels = np.asarray(labels)
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    loss = float(-logp[np.arange(B), labels].mean())
    p = np.exp(logp)
    d = p.copy()
    d[np.arange(B), labels] -= 1.0
    return loss, p, d / B


@dataclass
class Adam:
    params: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple  # (array index, flat index)
    per_array: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(loss_fn, arrays: list, analytic: list, h: float = 1e-6,
               tolerance: float = 1e-5, floor: float = 1e-7, stencil: int = 2) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn()`` must read ``arrays`` in place; each entry is perturbed in
    turn. ``stencil=2`` is the classic (f(x+h) - f(x-h)) / 2h; ``stencil=4``
    adds the +-2h points for an O(h^4) estimate, which tolerates a larger h
    and so loses less to round-off on small gradient entries. The relative
    error of an entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    errs = []
    worst, worst_err = (0, 0), 0.0

    def at(flat, i, v):
        flat[i] = v
        return loss_fn()

    for ai, (arr, grad) in enumerate(zip(arrays, analytic)):
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        e_max = 0.0
        for i in range(flat.size):
            old = flat[i]
            if stencil == 2:
                num = (at(flat, i, old + h) - at(flat, i, old - h)) / (2 * h)
            else:
                num = (8 * (at(flat, i, old + h) - at(flat, i, old - h))
                       - (at(flat, i, old + 2 * h) - at(flat, i, old - 2 * h))) / (12 * h)
            flat[i] = old
            a = gflat[i]
            e = abs(a - num) / max(abs(a), abs(num), floor)
            if e > e_max:
                e_max = e
            if e > worst_err:
                worst_err, worst = e, (ai, i)
        errs.append(e_max)
    return GradCheckReport(worst_err, worst, errs, tolerance)
