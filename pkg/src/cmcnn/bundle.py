"""Trained-model container and its binary file.

File layout (little-endian)::

    b"CMMB" | u16 major | u16 minor | u32 header_len | header JSON (utf-8)
    parameter blocks: raw f64, in header["manifest"] order
    b"SHA2" | 32-byte SHA-256 of every preceding byte
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import CNN, Cascade, CNNConfig
from .correction import CorrectionModule
from .dataset import FOOTER, FormatError, _check_footer

MAGIC = b"CMMB"
VERSION = (1, 0)


@dataclass
class TrainConfig:
    regime: str = "non_negative"
    ablation: str = "both"
    K: int = 1
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    patience: int = 10
    fractions: tuple = (0.6, 0.2, 0.2)
    split_seed: int = 0
    # "published": 3-layer 2-channel comparator; "regime": regime CNN without the CM
    baseline_arch: str = "published"
    n_classes: int = 8
    hidden: int = 80

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if self.regime not in ("non_negative", "negative"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.ablation not in ("none", "freq_only", "phase_only", "both"):
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1) > 1e-9 or min(self.fractions) < 0:
            raise ValueError("fractions must be three non-negative numbers summing to 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.baseline_arch not in ("published", "regime"):
            raise ValueError(f"unknown baseline_arch {self.baseline_arch!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def cnn_config(self) -> CNNConfig:
        if self.ablation == "none":
            variant = "negative" if self.baseline_arch == "published" else self.regime
            return CNNConfig(variant, 2, self.n_classes)
        return CNNConfig(self.regime, 2 * (self.K + 1), self.n_classes)


def build_model(config: TrainConfig) -> Cascade:
    """Fresh cascade for a config; deterministic in ``config.seed``."""
    s_cnn, s_fcn = (int(s) for s in np.random.SeedSequence(config.seed).generate_state(2))
    cnn = CNN(config.cnn_config(), s_cnn)
    cm = None
    if config.ablation != "none":
        cm = CorrectionModule(config.K, config.hidden, config.ablation, np.random.default_rng(s_fcn))
    return Cascade(cnn, cm)


@dataclass
class ModelBundle:
    config: TrainConfig
    params: dict  # name -> ndarray, CM first then CNN
    curves: dict = field(default_factory=dict)
    dataset_fingerprint: str = ""
    test_split_fingerprint: str = ""
    val_accuracy: float = float("nan")
    format_version: str = f"{VERSION[0]}.{VERSION[1]}"

    @property
    def cnn_config(self) -> CNNConfig:
        return self.config.cnn_config()

    @property
    def fcn_params(self) -> dict | None:
        out = {k: v for k, v in self.params.items() if k.startswith("fcn.")}
        return out or None

    @property
    def cnn_params(self) -> dict:
        return {k: v for k, v in self.params.items() if not k.startswith("fcn.")}

    @classmethod
    def from_model(cls, model: Cascade, config: TrainConfig, **kw) -> "ModelBundle":
        return cls(config, {p.name: p.data.copy() for p in model.params()}, **kw)

    def to_model(self) -> Cascade:
        model = build_model(self.config)
        for p in model.params():
            if p.name not in self.params or self.params[p.name].shape != p.shape:
                raise FormatError(f"bundle parameter {p.name} missing or misshapen")
            p.data[...] = self.params[p.name]
        return model

    def header(self) -> dict:
        return {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "cnn_config": self.cnn_config.to_dict(),
            "shape_trace": self.cnn_config.shape_trace(),
            "curves": self.curves,
            "dataset_fingerprint": self.dataset_fingerprint,
            "test_split_fingerprint": self.test_split_fingerprint,
            "val_accuracy": self.val_accuracy,
            "manifest": [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()],
        }

    def to_bytes(self) -> bytes:
        hjson = json.dumps(self.header(), sort_keys=True).encode()
        blocks = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in self.params.values())
        body = MAGIC + struct.pack("<HHI", *VERSION, len(hjson)) + hjson + blocks
        return body + FOOTER + hashlib.sha256(body).digest()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, name: str = "bundle") -> "ModelBundle":
        if data[:4] != MAGIC:
            raise FormatError(f"{name}: not a model bundle (bad magic)")
        major, minor, hlen = struct.unpack_from("<HHI", data, 4)
        if major != VERSION[0]:
            raise FormatError(f"{name}: unsupported bundle major version {major}")
        _check_footer(data, name)
        h = json.loads(data[12:12 + hlen])
        off = 12 + hlen
        params = {}
        for entry in h["manifest"]:
            n = int(np.prod(entry["shape"])) if entry["shape"] else 1
            params[entry["name"]] = np.frombuffer(data, "<f8", n, off).reshape(entry["shape"]).copy()
            off += 8 * n
        if off != len(data) - 36:
            raise FormatError(f"{name}: parameter blocks do not match manifest")
        return cls(TrainConfig.from_dict(h["config"]), params, h["curves"], h["dataset_fingerprint"],
                   h["test_split_fingerprint"], h["val_accuracy"], h["format_version"])

    @classmethod
    def load(cls, path) -> "ModelBundle":
        return cls.from_bytes(Path(path).read_bytes(), str(path))
