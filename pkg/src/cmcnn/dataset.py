"""Labeled frame sets: synthesis and the binary dataset file.

File layout (all little-endian)::

    b"CMDS" | u16 major | u16 minor | u32 header_len | header JSON (utf-8)
    u64 count
    count records: u8 label | f64 snr_db | f64[128][2] I/Q
                   [truth: f64[128] cfo_hz | f64[128] phase_rad | f64[128] sro_hz
                           | f64[2][n_taps][2] fading taps | u64 noise_seed]
    b"SHA2" | 32-byte SHA-256 of every preceding byte

The SHA-256 digest (hex) is the dataset fingerprint.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import ChannelParams, apply_channel, constant_offset, awgn
from .correction import to_channels
from .iq import CLASS_NAMES, DEFAULT_ROLLOFF, DEFAULT_SPAN, DEFAULT_SPS, FRAME_LEN, IQFrame, Modulation, \
    modulate, random_bits

MAGIC = b"CMDS"
FOOTER = b"SHA2"
VERSION = (1, 0)
THREADS_ENV = "CMCNN_THREADS"


class FormatError(ValueError):
    """Unreadable, corrupted or unsupported file."""


class IntegrityError(FormatError):
    pass


@dataclass
class Examples:
    """Frames, labels and SNRs only; the input type of every training path."""

    iq: np.ndarray  # [N, 128] complex
    labels: np.ndarray
    snr_db: np.ndarray
    fingerprint: str = ""
    indices: np.ndarray | None = None
    sample_rate: float = 200e3

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.snr_db = np.asarray(self.snr_db, dtype=np.float64)
        if self.indices is None:
            self.indices = np.arange(len(self.labels))

    def __len__(self):
        return len(self.labels)

    @property
    def x(self) -> np.ndarray:
        return to_channels(self.iq)

    def subset(self, idx) -> "Examples":
        idx = np.asarray(idx, dtype=np.int64)
        return Examples(self.iq[idx], self.labels[idx], self.snr_db[idx], self.fingerprint,
                        self.indices[idx], self.sample_rate)


@dataclass
class Truth:
    cfo_hz: np.ndarray
    phase_rad: np.ndarray
    sro_hz: np.ndarray
    fading_taps: np.ndarray  # [N, 2, n_taps] complex
    noise_seed: np.ndarray

    def offsets(self, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-frame mean CFO in rad/sample and starting phase in rad."""
        omega = 2 * np.pi * self.cfo_hz.mean(axis=1) / sample_rate
        return omega, self.phase_rad[:, 0].copy()


@dataclass
class GenConfig:
    schemes: list = field(default_factory=lambda: list(CLASS_NAMES))
    snr_grid: list = field(default_factory=lambda: list(range(-20, 20, 2)))
    frames_per_cell: int = 100
    master_seed: int = 0
    sps: int = DEFAULT_SPS
    rolloff: float = DEFAULT_ROLLOFF
    span: int = DEFAULT_SPAN
    with_truth: bool = True
    # "channel": full impairment chain; "constant_offset": fixed (omega, phi) + AWGN
    distortion: str = "channel"
    omega_max: float = 2 * np.pi * 500 / 200e3
    channel: ChannelParams = field(default_factory=ChannelParams)

    def __post_init__(self):
        self.schemes = [Modulation.parse(s).label for s in self.schemes]
        if not self.snr_grid:
            raise ValueError("SNR grid is empty")
        if self.frames_per_cell < 1:
            raise ValueError("frames_per_cell must be positive")
        if self.distortion not in ("channel", "constant_offset"):
            raise ValueError(f"unknown distortion {self.distortion!r}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("schemes", "frames_per_cell", "master_seed", "sps", "rolloff",
                                           "span", "with_truth", "distortion", "omega_max")}
        d["snr_grid"] = [float(s) for s in self.snr_grid]
        ch = self.channel.to_dict()
        ch["snr_db"] = None  # set per cell
        d["channel"] = ch
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        ch = dict(d.pop("channel", {}))
        if ch.get("snr_db") is None:
            ch.pop("snr_db", None)
        return cls(channel=ChannelParams.from_dict(ch), **d)


@dataclass
class Dataset:
    header: dict
    iq: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    truth: Truth | None = None
    fingerprint: str = ""

    def __len__(self):
        return len(self.labels)

    @property
    def sample_rate(self) -> float:
        return float(self.header["generation"]["channel"]["sample_rate"])

    @property
    def class_names(self) -> list[str]:
        return list(self.header.get("class_names", CLASS_NAMES))

    def examples(self) -> Examples:
        """Training view: the impairment truth is not carried over."""
        return Examples(self.iq, self.labels, self.snr_db, self.fingerprint, None, self.sample_rate)

    def cell_counts(self) -> dict:
        out = {}
        for lab, snr in zip(self.labels, self.snr_db):
            key = (self.class_names[lab], float(snr))
            out[key] = out.get(key, 0) + 1
        return out


def frame_seeds(master_seed: int, index: int) -> np.ndarray:
    """Per-frame (bits, modulation, channel) seeds; independent of scheduling."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,)).generate_state(3)


def _synthesize(cfg: GenConfig, index: int, scheme: str, snr: float):
    s_bits, s_mod, s_chan = (int(v) for v in frame_seeds(cfg.master_seed, index))
    bits = random_bits(scheme, np.random.default_rng(s_bits), cfg.sps, cfg.rolloff, cfg.span)
    frame = modulate(scheme, bits, cfg.sps, cfg.rolloff, s_mod, span=cfg.span,
                     sample_rate=cfg.channel.sample_rate)
    n_taps = cfg.channel.n_taps
    if cfg.distortion == "constant_offset":
        rng = np.random.default_rng(s_chan)
        omega = rng.uniform(-cfg.omega_max, cfg.omega_max)
        phi = rng.uniform(0, 2 * np.pi)
        noise_seed = int(rng.integers(2 ** 32))
        y = awgn(frame.with_samples(constant_offset(frame.samples, omega, phi)), snr, noise_seed)
        n = np.arange(FRAME_LEN)
        cfo = np.full(FRAME_LEN, omega * cfg.channel.sample_rate / (2 * np.pi))
        return y.samples, (cfo, phi + omega * n, np.zeros(FRAME_LEN), np.zeros((2, n_taps), complex), noise_seed)
    params = replace(cfg.channel, snr_db=float(snr))
    y, tr = apply_channel(frame, params, s_chan)
    taps = tr.fading_taps if tr.fading_taps is not None else np.zeros((2, n_taps), complex)
    return y.samples, (tr.cfo_hz, tr.phase_rad, tr.sro_hz, taps, tr.noise_seed)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def generate_dataset(cfg: GenConfig, threads: int | None = None) -> Dataset:
    """Stratified synthesis: frames_per_cell frames for every (scheme, SNR) cell."""
    jobs = []
    for scheme in cfg.schemes:
        for snr in cfg.snr_grid:
            for _ in range(cfg.frames_per_cell):
                jobs.append((len(jobs), scheme, float(snr)))
    threads = thread_count() if threads is None else threads

    def run(job):
        return _synthesize(cfg, *job)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, jobs, chunksize=64))
    else:
        results = [run(j) for j in jobs]

    n = len(jobs)
    iq = np.array([r[0] for r in results]).reshape(n, FRAME_LEN)
    labels = np.array([int(Modulation.parse(j[1])) for j in jobs], dtype=np.int64)
    snr = np.array([j[2] for j in jobs])
    truth = None
    if cfg.with_truth:
        tr = [r[1] for r in results]
        truth = Truth(np.array([t[0] for t in tr]).reshape(n, FRAME_LEN),
                      np.array([t[1] for t in tr]).reshape(n, FRAME_LEN),
                      np.array([t[2] for t in tr]).reshape(n, FRAME_LEN),
                      np.array([t[3] for t in tr]).reshape(n, 2, cfg.channel.n_taps),
                      np.array([t[4] for t in tr], dtype=np.uint64))
    header = {"generation": cfg.to_dict(), "class_names": list(CLASS_NAMES), "count": n,
              "has_truth": cfg.with_truth, "n_taps": cfg.channel.n_taps,
              "awgn_calibration": "noise power 10^(-snr_db/10) for unit-power frames"}
    ds = Dataset(header, iq, labels, snr, truth)
    ds.fingerprint = hashlib.sha256(dataset_bytes(ds)[:-36]).hexdigest()
    return ds


def _record_dtype(has_truth: bool, n_taps: int) -> np.dtype:
    fields = [("label", "u1"), ("snr_db", "<f8"), ("iq", "<f8", (FRAME_LEN, 2))]
    if has_truth:
        fields += [("cfo_hz", "<f8", (FRAME_LEN,)), ("phase_rad", "<f8", (FRAME_LEN,)),
                   ("sro_hz", "<f8", (FRAME_LEN,)), ("taps", "<f8", (2, n_taps, 2)), ("noise_seed", "<u8")]
    return np.dtype(fields)


def dataset_bytes(ds: Dataset) -> bytes:
    has_truth = ds.truth is not None
    header = dict(ds.header, count=len(ds), has_truth=has_truth)
    hjson = json.dumps(header, sort_keys=True).encode()
    n_taps = int(header["n_taps"])
    rec = np.zeros(len(ds), dtype=_record_dtype(has_truth, n_taps))
    rec["label"] = ds.labels
    rec["snr_db"] = ds.snr_db
    rec["iq"] = np.stack([ds.iq.real, ds.iq.imag], axis=-1)
    if has_truth:
        rec["cfo_hz"] = ds.truth.cfo_hz
        rec["phase_rad"] = ds.truth.phase_rad
        rec["sro_hz"] = ds.truth.sro_hz
        rec["taps"] = np.stack([ds.truth.fading_taps.real, ds.truth.fading_taps.imag], axis=-1)
        rec["noise_seed"] = ds.truth.noise_seed
    body = MAGIC + struct.pack("<HHI", *VERSION, len(hjson)) + hjson + struct.pack("<Q", len(ds)) + rec.tobytes()
    return body + FOOTER + hashlib.sha256(body).digest()


def write_dataset(ds: Dataset, path) -> str:
    data = dataset_bytes(ds)
    Path(path).write_bytes(data)
    return data[-32:].hex()


def _check_footer(data: bytes, kind: str) -> str:
    if len(data) < 36 or data[-36:-32] != FOOTER:
        raise IntegrityError(f"{kind}: missing footer")
    digest = hashlib.sha256(data[:-36]).digest()
    if digest != data[-32:]:
        raise IntegrityError(f"{kind}: footer hash mismatch (file corrupted)")
    return digest.hex()


def read_dataset(path, verify: bool = True) -> Dataset:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a dataset file (bad magic)")
    major, minor, hlen = struct.unpack_from("<HHI", data, 4)
    if major != VERSION[0]:
        raise FormatError(f"{path}: unsupported dataset major version {major}")
    fp = _check_footer(data, str(path)) if verify else data[-32:].hex()
    off = 12
    header = json.loads(data[off:off + hlen])
    off += hlen
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    if count != header["count"]:
        raise FormatError(f"{path}: header count {header['count']} != record count {count}")
    dt = _record_dtype(header["has_truth"], int(header["n_taps"]))
    if off + count * dt.itemsize != len(data) - 36:
        raise FormatError(f"{path}: record block length does not match count")
    rec = np.frombuffer(data, dtype=dt, count=count, offset=off)
    iq = rec["iq"][..., 0] + 1j * rec["iq"][..., 1]
    truth = None
    if header["has_truth"]:
        taps = rec["taps"][..., 0] + 1j * rec["taps"][..., 1]
        truth = Truth(rec["cfo_hz"].copy(), rec["phase_rad"].copy(), rec["sro_hz"].copy(), taps,
                      rec["noise_seed"].copy())
    return Dataset(header, iq, rec["label"].astype(np.int64), rec["snr_db"].copy(), truth, fp)


def peek_magic(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(4)
