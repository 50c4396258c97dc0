"""Learnable frequency/phase correction in front of the classifier.

A one-hidden-layer network reads the raw frame and emits K (omega, phi)
pairs. Each pair derotates the frame by exp(-j(omega*n + phi)); the raw
frame is kept as version k=0, so the output stacks K+1 I/Q channel pairs.
"""

from __future__ import annotations

import numpy as np

from .iq import FRAME_LEN, IQFrame
from .nn import Dense, ReLU, Tensor

ABLATIONS = ("none", "freq_only", "phase_only", "both")


def derotate(frame: IQFrame, omega: float, phi: float) -> IQFrame:
    """y[n] = x[n] * exp(-j(omega*n + phi)), n = 0..127."""
    n = np.arange(FRAME_LEN)
    return frame.with_samples(frame.samples * np.exp(-1j * (omega * n + phi)))


def to_channels(iq: np.ndarray) -> np.ndarray:
    """Complex [..., L] -> real [..., 2, L] with I first."""
    iq = np.asarray(iq)
    return np.stack([iq.real, iq.imag], axis=-2).astype(np.float64)


def to_complex(x: np.ndarray) -> np.ndarray:
    return x[..., 0, :] + 1j * x[..., 1, :]


class CorrectionModule:
    """FCN offset estimator followed by the static derotation.

    ``forward`` maps [B, 2, 128] -> [B, 2(K+1), 128]; channel pairs are
    ordered (I_0, Q_0, I_1, Q_1, ...).
    """

    def __init__(self, K: int = 1, hidden: int = 80, ablation: str = "both",
                 rng: np.random.Generator | None = None, length: int = FRAME_LEN,
                 omega_scale: float = 1.0 / FRAME_LEN):
        if K < 1:
            raise ValueError("K must be at least 1")
        if ablation not in ("freq_only", "phase_only", "both"):
            raise ValueError(f"correction module cannot run with ablation {ablation!r}")
        self.K = K
        self.ablation = ablation
        # omega = omega_scale * raw output, so a unit output is ~1 rad of drift per frame
        self.omega_scale = omega_scale
        self.length = length
        self.hidden = Dense(2 * length, hidden, rng if rng is not None else np.random.default_rng(0), "fcn.hidden")
        self.act = ReLU()
        # zero output layer: correction starts at the identity
        self.out = Dense(hidden, 2 * K, None, "fcn.out")
        self._cache = None
        self.last_offsets = None

    def params(self) -> list[Tensor]:
        return self.hidden.params() + self.out.params()

    @property
    def out_channels(self) -> int:
        return 2 * (self.K + 1)

    def _mask(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        omega, phi = self.omega_scale * raw[:, 0::2], raw[:, 1::2]
        if self.ablation == "freq_only":
            phi = np.zeros_like(phi)
        elif self.ablation == "phase_only":
            omega = np.zeros_like(omega)
        return omega, phi

    def estimate_offsets(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """FCN forward only: ([B, K] omega in rad/sample, [B, K] phi in rad)."""
        B = x.shape[0]
        h = self.act.forward(self.hidden.forward(x.reshape(B, -1)))
        return self._mask(self.out.forward(h))

    def forward(self, x: np.ndarray, offsets: tuple | None = None) -> np.ndarray:
        """Run the CM. ``offsets`` bypasses the FCN with externally supplied pairs."""
        B, C, L = x.shape
        if offsets is None:
            omega, phi = self.estimate_offsets(x)
            fed = False
        else:
            omega = np.asarray(offsets[0], dtype=float).reshape(B, self.K)
            phi = np.asarray(offsets[1], dtype=float).reshape(B, self.K)
            fed = True
        self.last_offsets = (omega, phi)
        n = np.arange(L)
        theta = omega[:, :, None] * n + phi[:, :, None]  # [B, K, L]
        c, s = np.cos(theta), np.sin(theta)
        I, Q = x[:, 0:1, :], x[:, 1:2, :]
        YI = I * c + Q * s
        YQ = Q * c - I * s
        y = np.empty((B, 2 * (self.K + 1), L))
        y[:, 0:2] = x
        y[:, 2::2] = YI
        y[:, 3::2] = YQ
        self._cache = (c, s, YI, YQ, fed)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called without a forward pass")
        c, s, YI, YQ, fed = self._cache
        self._cache = None
        B, _, L = dy.shape
        dYI, dYQ = dy[:, 2::2], dy[:, 3::2]
        dx = dy[:, 0:2].copy()
        dx[:, 0] += np.sum(dYI * c - dYQ * s, axis=1)
        dx[:, 1] += np.sum(dYI * s + dYQ * c, axis=1)
        if fed:
            return dx
        dtheta = dYI * YQ - dYQ * YI  # [B, K, L]
        n = np.arange(L)
        domega = dtheta @ n
        dphi = dtheta.sum(axis=2)
        if self.ablation == "freq_only":
            dphi = np.zeros_like(dphi)
        elif self.ablation == "phase_only":
            domega = np.zeros_like(domega)
        dout = np.empty((B, 2 * self.K))
        dout[:, 0::2] = self.omega_scale * domega
        dout[:, 1::2] = dphi
        dh = self.act.backward(self.out.backward(dout))
        dx += self.hidden.backward(dh).reshape(B, 2, L)
        return dx
