"""1-D CNN classifiers and the CM+CNN cascade."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .correction import CorrectionModule
from .iq import FRAME_LEN
from .nn import Conv1D, Dense, Flatten, MaxPool2, ReLU, softmax

VARIANTS = {"non_negative": 4, "negative": 3}


@dataclass
class CNNConfig:
    variant: str = "non_negative"
    in_channels: int = 4
    n_classes: int = 8
    filters_per_layer: int = 50
    kernel: int = 8
    dense_width: int = 512
    length: int = FRAME_LEN

    @property
    def n_conv(self) -> int:
        try:
            return VARIANTS[self.variant]
        except KeyError:
            raise ValueError(f"unknown CNN variant {self.variant!r}") from None

    def shape_trace(self) -> list[tuple[str, int]]:
        """Sequence length after every conv/pool stage, then the flatten width."""
        trace = []
        L = self.length
        for i in range(self.n_conv):
            L = L - self.kernel + 1
            if L < 1:
                raise ValueError(f"conv {i + 1} underflows: kernel {self.kernel} longer than input")
            trace.append((f"conv{i + 1}", L))
            if i < 2:
                if L < 2:
                    raise ValueError(f"pool {i + 1} underflows")
                L //= 2
                trace.append((f"pool{i + 1}", L))
        trace.append(("flatten", self.filters_per_layer * L))
        return trace

    def to_dict(self) -> dict:
        return asdict(self)


class CNN:
    """conv(+pool) x n_conv -> dense(relu) -> dense -> softmax."""

    def __init__(self, config: CNNConfig, seed: int = 0):
        self.config = config
        self.trace = config.shape_trace()
        rng = np.random.default_rng(seed)
        layers = []
        c_in = config.in_channels
        L = config.length
        for i in range(config.n_conv):
            conv = Conv1D(c_in, config.filters_per_layer, config.kernel, rng, f"conv{i + 1}")
            L = conv.out_len(L)
            layers += [conv, ReLU()]
            if i < 2:
                layers.append(MaxPool2())
                L = MaxPool2.out_len(L)
            c_in = config.filters_per_layer
        flat = c_in * L
        assert flat == self.trace[-1][1], "shape trace disagrees with layer arithmetic"
        layers += [Flatten(), Dense(flat, config.dense_width, rng, "dense"), ReLU(),
                   Dense(config.dense_width, config.n_classes, rng, "output", gain=0.1)]
        self.layers = layers

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits for a [B, C, L] batch."""
        if x.shape[1:] != (self.config.in_channels, self.config.length):
            raise ValueError(f"expected input [B, {self.config.in_channels}, {self.config.length}], got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    @property
    def output_layer(self) -> Dense:
        return self.layers[-1]


def build_cnn(config: CNNConfig, seed: int = 0) -> CNN:
    return CNN(config, seed)


class Cascade:
    """Optional correction module feeding a CNN; the trainable unit."""

    def __init__(self, cnn: CNN, cm: CorrectionModule | None = None):
        if cm is not None and cm.out_channels != cnn.config.in_channels:
            raise ValueError("CNN input channels do not match the correction module output")
        if cm is None and cnn.config.in_channels != 2:
            raise ValueError("a CNN without correction module takes 2 input channels")
        self.cnn = cnn
        self.cm = cm

    def params(self):
        return (self.cm.params() if self.cm else []) + self.cnn.params()

    def forward(self, x: np.ndarray, offsets=None) -> np.ndarray:
        if self.cm is not None:
            x = self.cm.forward(x, offsets)
        return self.cnn.forward(x)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = self.cnn.backward(dlogits)
        if self.cm is not None:
            d = self.cm.backward(d)
        return d

    def predict_proba(self, x: np.ndarray, batch: int = 512, offsets=None) -> np.ndarray:
        out = []
        for i in range(0, len(x), batch):
            off = None if offsets is None else (offsets[0][i:i + batch], offsets[1][i:i + batch])
            out.append(softmax(self.forward(x[i:i + batch], off)))
        return np.concatenate(out) if out else np.zeros((0, self.cnn.config.n_classes))

    def offsets(self, x: np.ndarray, batch: int = 512) -> tuple[np.ndarray, np.ndarray]:
        """FCN estimates for every frame: ([N, K], [N, K])."""
        om, ph = [], []
        for i in range(0, len(x), batch):
            o, p = self.cm.estimate_offsets(x[i:i + batch])
            om.append(o)
            ph.append(p)
        return np.concatenate(om), np.concatenate(ph)


def classify(x: np.ndarray, model: "CNN | Cascade") -> np.ndarray:
    """Class probabilities for one [C, L] input or a [B, C, L] batch.

    A bare CNN consumes correction-module output; a Cascade consumes raw frames.
    """
    single = x.ndim == 2
    xb = x[None] if single else x
    p = softmax(model.forward(xb)) if isinstance(model, CNN) else model.predict_proba(xb)
    return p[0] if single else p
