"""Digital modulators and pulse shaping for 128-sample baseband frames.

Eight digital schemes are supported. The six linear ones (BPSK, QPSK, 8PSK,
PAM4, QAM16, QAM64) are Gray mapped and shaped with a root-raised-cosine
filter; GFSK and CPFSK are generated by phase integration and therefore have
a constant envelope. Every frame is normalized to unit average power.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

FRAME_LEN = 128
DEFAULT_SAMPLE_RATE = 200e3
DEFAULT_SPS = 8
DEFAULT_ROLLOFF = 0.35
DEFAULT_SPAN = 8
GFSK_BT = 0.35
GFSK_SPAN = 4
MOD_INDEX = 0.5


class Modulation(IntEnum):
    BPSK = 0
    QPSK = 1
    PSK8 = 2
    PAM4 = 3
    QAM16 = 4
    QAM64 = 5
    GFSK = 6
    CPFSK = 7

    @property
    def label(self) -> str:
        return "8PSK" if self is Modulation.PSK8 else self.name

    @classmethod
    def parse(cls, value: "str | int | Modulation") -> "Modulation":
        if isinstance(value, Modulation):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).upper()
        if key == "8PSK":
            return cls.PSK8
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown modulation scheme {value!r}") from None


CLASS_NAMES = [m.label for m in Modulation]
LINEAR_SCHEMES = (
    Modulation.BPSK,
    Modulation.QPSK,
    Modulation.PSK8,
    Modulation.PAM4,
    Modulation.QAM16,
    Modulation.QAM64,
)
BITS_PER_SYMBOL = {
    Modulation.BPSK: 1,
    Modulation.QPSK: 2,
    Modulation.PSK8: 3,
    Modulation.PAM4: 2,
    Modulation.QAM16: 4,
    Modulation.QAM64: 6,
    Modulation.GFSK: 1,
    Modulation.CPFSK: 1,
}


@dataclass(frozen=True)
class IQFrame:
    """A block of exactly 128 complex baseband samples."""

    samples: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.shape != (FRAME_LEN,):
            raise ValueError(f"frame must have {FRAME_LEN} samples, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("frame contains non-finite samples")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples: np.ndarray) -> "IQFrame":
        return IQFrame(samples, self.sample_rate)


def _gray(n: np.ndarray) -> np.ndarray:
    return n ^ (n >> 1)


def _pam_levels(m: int) -> np.ndarray:
    """Amplitude for each Gray label of an m-level PAM, unnormalized."""
    levels = np.empty(m)
    pos = np.arange(m)
    levels[_gray(pos)] = 2 * pos - (m - 1)
    return levels


def constellation_for(scheme) -> np.ndarray:
    """Unit-power constellation indexed by the integer value of the bit label.

    ``constellation_for(s)[b]`` is the point carrying bits ``b`` (MSB first).
    """
    scheme = Modulation.parse(scheme)
    if scheme not in LINEAR_SCHEMES:
        raise ValueError(f"{scheme.label} is continuous-phase and has no constellation")
    if scheme is Modulation.BPSK:
        pts = np.array([1.0, -1.0], dtype=complex)
    elif scheme is Modulation.PSK8:
        pos = np.arange(8)
        pts = np.empty(8, dtype=complex)
        pts[_gray(pos)] = np.exp(2j * np.pi * pos / 8)
    elif scheme is Modulation.PAM4:
        pts = _pam_levels(4).astype(complex)
    else:
        m = {Modulation.QPSK: 4, Modulation.QAM16: 16, Modulation.QAM64: 64}[scheme]
        side = int(round(np.sqrt(m)))
        half = int(np.log2(side))
        lv = _pam_levels(side)
        b = np.arange(m)
        # high half of the label drives I, low half drives Q
        i_lv = -lv[b >> half]
        q_lv = -lv[b & (side - 1)]
        pts = i_lv + 1j * q_lv
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def rrc_taps(rolloff: float = DEFAULT_ROLLOFF, span_symbols: int = DEFAULT_SPAN, sps: int = DEFAULT_SPS) -> np.ndarray:
    """Root-raised-cosine impulse response with unit energy, length span*sps+1."""
    if not 0 < rolloff <= 1:
        raise ValueError("rolloff must lie in (0, 1]")
    if span_symbols < 4 or sps < 2:
        raise ValueError("need span_symbols >= 4 and sps >= 2")
    b = rolloff
    half = span_symbols * sps // 2
    n = np.arange(-half, half + 1)
    t = n / sps
    h = np.empty(t.shape)
    for i, ti in enumerate(t):
        if ti == 0:
            h[i] = 1 + b * (4 / np.pi - 1)
        elif np.isclose(abs(ti), 1 / (4 * b)):
            h[i] = (b / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            den = np.pi * ti * (1 - (4 * b * ti) ** 2)
            h[i] = num / den
    h = 0.5 * (h + h[::-1])  # exact symmetry
    return h / np.sqrt(np.sum(h ** 2))


def gaussian_taps(bt: float = GFSK_BT, span_symbols: int = GFSK_SPAN, sps: int = DEFAULT_SPS) -> np.ndarray:
    """Gaussian frequency-smoothing filter normalized to unit DC gain."""
    half = span_symbols * sps // 2
    t = np.arange(-half, half + 1) / sps
    h = np.exp(-2 * np.pi ** 2 * bt ** 2 * t ** 2 / np.log(2))
    return h / h.sum()


def _pulse(scheme: Modulation, sps: int, rolloff: float | None, span: int) -> np.ndarray:
    if scheme is Modulation.GFSK:
        return gaussian_taps(GFSK_BT, GFSK_SPAN, sps)
    if scheme is Modulation.CPFSK:
        return np.ones(1)
    if rolloff is None:
        return np.ones(sps)
    return rrc_taps(rolloff, span, sps)


def _timing_offset(seed: int, sps: int) -> int:
    return int(np.random.default_rng(seed).integers(sps))


def symbols_required(scheme, sps: int = DEFAULT_SPS, rolloff: float | None = DEFAULT_ROLLOFF,
                     span: int = DEFAULT_SPAN) -> int:
    taps = _pulse(Modulation.parse(scheme), sps, rolloff, span)
    return int(np.ceil((len(taps) - 1 + sps + FRAME_LEN) / sps))


def bits_required(scheme, sps: int = DEFAULT_SPS, rolloff: float | None = DEFAULT_ROLLOFF,
                  span: int = DEFAULT_SPAN) -> int:
    scheme = Modulation.parse(scheme)
    return symbols_required(scheme, sps, rolloff, span) * BITS_PER_SYMBOL[scheme]


def bits_to_symbols(scheme, bits) -> np.ndarray:
    """Map a bit sequence to constellation points (linear schemes) or +-1 (CPM)."""
    scheme = Modulation.parse(scheme)
    bits = np.asarray(bits, dtype=np.int64)
    k = BITS_PER_SYMBOL[scheme]
    n = len(bits) // k
    words = bits[: n * k].reshape(n, k) @ (1 << np.arange(k - 1, -1, -1))
    if scheme in LINEAR_SCHEMES:
        return constellation_for(scheme)[words]
    return 1.0 - 2.0 * words


def modulate(scheme, symbol_bits, sps: int = DEFAULT_SPS, rolloff: float | None = DEFAULT_ROLLOFF,
             seed: int = 0, *, span: int = DEFAULT_SPAN,
             sample_rate: float = DEFAULT_SAMPLE_RATE) -> IQFrame:
    """Produce one unit-power 128-sample frame.

    ``rolloff=None`` selects a rectangular pulse for the linear schemes. The
    seed picks the sub-symbol timing phase of the frame window; filter
    transients at both ends of the shaped stream are trimmed away.
    """
    scheme = Modulation.parse(scheme)
    bits = np.asarray(symbol_bits, dtype=np.int64)
    need = bits_required(scheme, sps, rolloff, span)
    if len(bits) < need:
        raise ValueError(f"{scheme.label} needs at least {need} bits, got {len(bits)}")
    taps = _pulse(scheme, sps, rolloff, span)
    sym = bits_to_symbols(scheme, bits[:need])
    start = len(taps) - 1 + _timing_offset(seed, sps)

    if scheme in LINEAR_SCHEMES:
        up = np.zeros(len(sym) * sps, dtype=complex)
        up[::sps] = sym
        stream = np.convolve(up, taps)
    else:
        freq = np.convolve(np.repeat(sym, sps), taps)
        stream = np.exp(1j * np.pi * MOD_INDEX * np.cumsum(freq) / sps)
    x = stream[start:start + FRAME_LEN]
    x = x / np.sqrt(np.mean(np.abs(x) ** 2))
    return IQFrame(x, sample_rate)


def demodulate_linear(frame: IQFrame, scheme, sps: int = DEFAULT_SPS, rolloff: float = DEFAULT_ROLLOFF,
                      seed: int = 0, *, span: int = DEFAULT_SPAN) -> tuple[np.ndarray, np.ndarray]:
    """Matched-filter a distortion-free frame and sample at symbol centers.

    Returns ``(symbol_indices, soft_symbols)`` for the symbols whose matched
    filter window lies fully inside the frame. The soft values carry the
    unknown per-frame normalization gain.
    """
    scheme = Modulation.parse(scheme)
    taps = rrc_taps(rolloff, span, sps)
    delay = (len(taps) - 1) // 2
    start = len(taps) - 1 + _timing_offset(seed, sps)
    z = np.convolve(frame.samples, taps)
    n_sym = symbols_required(scheme, sps, rolloff, span)
    idx, soft = [], []
    for s in range(n_sym):
        c = s * sps + delay - start
        if c - delay >= 0 and c + delay <= FRAME_LEN - 1:
            idx.append(s)
            soft.append(z[c + delay])
    return np.array(idx, dtype=int), np.array(soft)


def random_bits(scheme, rng: np.random.Generator, sps: int = DEFAULT_SPS,
                rolloff: float | None = DEFAULT_ROLLOFF, span: int = DEFAULT_SPAN) -> np.ndarray:
    return rng.integers(0, 2, size=bits_required(scheme, sps, rolloff, span))
