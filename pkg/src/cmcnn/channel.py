"""Channel impairment chain: sample-rate-offset walk, Rician fading, CFO/phase walk, AWGN.

Each stage is a pure function of (frame, params, seed) and returns the
distorted frame together with an :class:`ImpairmentTrace` holding the
ground-truth trajectories it drew.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .iq import FRAME_LEN, IQFrame


@dataclass
class ChannelParams:
    sample_rate: float = 200e3
    sro_walk_std: float = 0.01
    sro_max: float = 50.0
    cfo_walk_std: float = 0.01
    cfo_max: float = 500.0
    n_sinusoids: int = 8
    max_doppler: float = 1.0
    fading: str = "rician"  # "rician" or "none"
    k_factor: float = 4.0
    delays: list = field(default_factory=lambda: [0.0, 0.9, 1.7])
    magnitudes: list = field(default_factory=lambda: [1.0, 0.8, 0.3])
    n_taps: int = 8
    snr_db: float = float("inf")
    # not in the channel table; starting state of the walks
    init_offset_fraction: float = 0.1
    cfo_init_hz: float | None = None
    sro_init_hz: float | None = None
    phase_init_rad: float | None = None
    normalize_magnitudes: bool = True

    def __post_init__(self):
        if min(self.sro_walk_std, self.cfo_walk_std, self.sro_max, self.cfo_max) < 0:
            raise ValueError("walk deviations and clamps must be non-negative")
        if len(self.delays) != len(self.magnitudes):
            raise ValueError("delays and magnitudes must have equal length")
        if self.k_factor < 0:
            raise ValueError("k_factor must be non-negative")
        if self.fading not in ("rician", "none"):
            raise ValueError(f"unknown fading model {self.fading!r}")
        if self.delays and max(self.delays) + 1 >= self.n_taps:
            raise ValueError("largest delay does not fit in n_taps")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["delays"] = [float(x) for x in d["delays"]]
        d["magnitudes"] = [float(x) for x in d["magnitudes"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def disabled(cls, **overrides) -> "ChannelParams":
        """A configuration under which every stage is the identity."""
        base = dict(sro_walk_std=0.0, cfo_walk_std=0.0, cfo_init_hz=0.0, sro_init_hz=0.0,
                    phase_init_rad=0.0, fading="none", snr_db=float("inf"))
        base.update(overrides)
        return cls(**base)


@dataclass
class ImpairmentTrace:
    """Ground truth drawn by the channel; diagnostics only."""

    cfo_hz: np.ndarray | None = None
    phase_rad: np.ndarray | None = None
    sro_hz: np.ndarray | None = None
    fading_taps: np.ndarray | None = None  # [2, n_taps] complex: first and last sample
    noise_seed: int = 0

    def merge(self, other: "ImpairmentTrace") -> "ImpairmentTrace":
        out = dataclasses.replace(self)
        for f in dataclasses.fields(self):
            v = getattr(other, f.name)
            if f.name == "noise_seed":
                if other.noise_seed:
                    out.noise_seed = v
            elif v is not None:
                setattr(out, f.name, v)
        return out

    def offsets(self, sample_rate: float) -> tuple[float, float]:
        """Frame-average CFO (rad/sample) and starting phase (rad)."""
        omega = 2 * np.pi * float(np.mean(self.cfo_hz)) / sample_rate
        return omega, float(self.phase_rad[0])


def _bounded_walk(n: int, start: float, std: float, limit: float, rng: np.random.Generator) -> np.ndarray:
    steps = rng.normal(0.0, std, size=n) if std > 0 else np.zeros(n)
    out = np.empty(n)
    v = start
    for i in range(n):
        v = min(max(v + steps[i], -limit), limit)
        out[i] = v
    return out


def _initial(value: float | None, limit: float, frac: float, rng: np.random.Generator) -> float:
    draw = rng.uniform(-limit * frac, limit * frac)
    return draw if value is None else float(value)


def cfo_phase_walk(frame: IQFrame, params: ChannelParams, seed: int) -> tuple[IQFrame, ImpairmentTrace]:
    """Rotate the frame by a random-walk carrier offset and its integrated phase."""
    rng = np.random.default_rng(seed)
    f0 = _initial(params.cfo_init_hz, params.cfo_max, params.init_offset_fraction, rng)
    theta0 = rng.uniform(0, 2 * np.pi)
    if params.phase_init_rad is not None:
        theta0 = float(params.phase_init_rad)
    f = _bounded_walk(FRAME_LEN, f0, params.cfo_walk_std, params.cfo_max, rng)
    inc = 2 * np.pi * f / params.sample_rate
    theta = theta0 + np.concatenate(([0.0], np.cumsum(inc[1:])))
    y = frame.samples * np.exp(1j * theta)
    return frame.with_samples(y), ImpairmentTrace(cfo_hz=f, phase_rad=theta)


def sro_resample(frame: IQFrame, params: ChannelParams, seed: int) -> tuple[IQFrame, ImpairmentTrace]:
    """Resample along a random-walk clock offset by linear interpolation."""
    rng = np.random.default_rng(seed)
    r0 = _initial(params.sro_init_hz, params.sro_max, params.init_offset_fraction, rng)
    r = _bounded_walk(FRAME_LEN, r0, params.sro_walk_std, params.sro_max, rng)
    idx = read_index(r, params.sample_rate)
    n = np.arange(FRAME_LEN)
    x = frame.samples
    # np.interp holds the end values outside [0, 127]
    y = np.interp(idx, n, x.real) + 1j * np.interp(idx, n, x.imag)
    return frame.with_samples(y), ImpairmentTrace(sro_hz=r)


def read_index(sro_hz: np.ndarray, sample_rate: float) -> np.ndarray:
    step = 1.0 + np.asarray(sro_hz) / sample_rate
    return np.concatenate(([0.0], np.cumsum(step[1:])))


def sos_rician_gain(n: int, params: ChannelParams, rng: np.random.Generator) -> np.ndarray:
    """Unit-power Rician gain process: LOS ray plus a sum-of-sinusoids diffuse part."""
    t = np.arange(n) / params.sample_rate
    fd = params.max_doppler
    m = params.n_sinusoids
    alpha = rng.uniform(0, 2 * np.pi, size=m)
    phase = rng.uniform(0, 2 * np.pi, size=m)
    diffuse = np.exp(1j * (2 * np.pi * fd * np.outer(t, np.cos(alpha)) + phase)).sum(axis=1) / np.sqrt(m)
    a0, p0 = rng.uniform(0, 2 * np.pi, size=2)
    los = np.exp(1j * (2 * np.pi * fd * np.cos(a0) * t + p0))
    k = params.k_factor
    if np.isinf(k):
        return los
    return np.sqrt(k / (k + 1)) * los + np.sqrt(1 / (k + 1)) * diffuse


def fading_taps(params: ChannelParams, rng: np.random.Generator, n: int = FRAME_LEN) -> np.ndarray:
    """Time-varying composite FIR taps, shape [n, n_taps]."""
    mags = np.asarray(params.magnitudes, dtype=float)
    if params.normalize_magnitudes and np.any(mags):
        mags = mags / np.sqrt(np.sum(mags ** 2))
    h = np.zeros((n, params.n_taps), dtype=complex)
    for d, mag in zip(params.delays, mags):
        g = mag * sos_rician_gain(n, params, rng)
        i0 = int(np.floor(d))
        frac = d - i0
        h[:, i0] += (1 - frac) * g
        if frac > 0:
            h[:, i0 + 1] += frac * g
    return h


def rician_fading(frame: IQFrame, params: ChannelParams, seed: int) -> tuple[IQFrame, ImpairmentTrace]:
    """Frequency-selective Rician fading over the configured fractional delays."""
    if params.fading == "none":
        return frame, ImpairmentTrace()
    rng = np.random.default_rng(seed)
    h = fading_taps(params, rng)
    x = frame.samples
    xp = np.concatenate((np.full(params.n_taps - 1, x[0]), x))
    L = params.n_taps
    # delayed copies: column m holds x[n - m]
    lagged = np.stack([xp[L - 1 - m: L - 1 - m + FRAME_LEN] for m in range(L)], axis=1)
    y = np.sum(h * lagged, axis=1)
    return frame.with_samples(y), ImpairmentTrace(fading_taps=h[[0, -1]])


def awgn(frame: IQFrame, snr_db: float, seed: int) -> IQFrame:
    """Add circular Gaussian noise of total power 10**(-snr_db/10)."""
    if np.isposinf(snr_db):
        return frame
    p = 10.0 ** (-snr_db / 10)
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(2, FRAME_LEN)) * np.sqrt(p / 2)
    return frame.with_samples(frame.samples + w[0] + 1j * w[1])


def constant_offset(samples: np.ndarray, omega: float, phi: float) -> np.ndarray:
    """Apply a fixed carrier offset: x[n] * exp(j(omega*n + phi))."""
    n = np.arange(np.shape(samples)[-1])
    return np.asarray(samples) * np.exp(1j * (omega * n + phi))


def stage_seeds(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(4)


def apply_channel(frame: IQFrame, params: ChannelParams, seed: int) -> tuple[IQFrame, ImpairmentTrace]:
    """Full chain: sro_resample -> rician_fading -> cfo_phase_walk -> awgn."""
    s_sro, s_fade, s_cfo, s_noise = (int(s) for s in stage_seeds(seed))
    y, trace = sro_resample(frame, params, s_sro)
    y, t = rician_fading(y, params, s_fade)
    trace = trace.merge(t)
    y, t = cfo_phase_walk(y, params, s_cfo)
    trace = trace.merge(t)
    y = awgn(y, params.snr_db, s_noise)
    trace.noise_seed = s_noise
    return y, trace
