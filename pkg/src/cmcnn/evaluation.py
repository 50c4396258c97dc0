"""Test-set metrics and their CSV/JSON exports.

An :class:`EvalReport` carries the accuracy-vs-SNR table, confusion matrices
per SNR regime, optional gain curves against a baseline, and the histogram of
the correction module's frequency and phase outputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bundle import ModelBundle
from .dataset import Examples
from .iq import CLASS_NAMES
from .trainer import split_fingerprint

SCHEMA_VERSION = "1.0"
OMEGA_REFERENCE_HZ = 0.01131
HIST_BINS = 61


class FingerprintMismatch(ValueError):
    pass


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    """counts[i, j] = number of examples of true class i predicted as j."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    for arr in (predictions, labels):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"class index outside [0, {n_classes - 1}]")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (labels, predictions), 1)
    return m


def row_normalize(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)


def accuracy_by_snr(predictions, labels, snr_db):
    snrs = np.unique(snr_db)
    acc, n = [], []
    for s in snrs:
        m = snr_db == s
        n.append(int(m.sum()))
        acc.append(float(np.mean(predictions[m] == labels[m])))
    return [float(s) for s in snrs], acc, n


def _histogram(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> dict:
    values = np.asarray(values, dtype=float).ravel()
    if lo is None:
        mu, sd = float(values.mean()), float(values.std())
        half = 3 * sd if sd > 0 else 0.5
        lo, hi = mu - half, mu + half
    counts, edges = np.histogram(values, bins=HIST_BINS, range=(lo, hi))
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def qam_confusion(counts, class_names=CLASS_NAMES) -> dict:
    """How much of the off-diagonal mass is QAM16 <-> QAM64."""
    c = np.asarray(counts)
    i, j = class_names.index("QAM16"), class_names.index("QAM64")
    pair = int(c[i, j] + c[j, i])
    off = int(c.sum() - np.trace(c))
    return {"qam16_as_qam64": int(c[i, j]), "qam64_as_qam16": int(c[j, i]),
            "share_of_errors": pair / off if off else 0.0}


@dataclass
class EvalReport:
    dataset_fingerprint: str
    config_hash: str
    class_names: list
    snr_db: list
    accuracy: list
    counts: list
    confusion: dict  # regime -> count matrix (list of lists)
    gains: dict = field(default_factory=dict)  # name -> per-SNR gain
    gain_std: dict = field(default_factory=dict)
    histogram: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    @property
    def overall_accuracy(self) -> float:
        n = np.asarray(self.counts, dtype=float)
        return float(np.dot(self.accuracy, n) / n.sum()) if n.sum() else float("nan")

    def accuracy_at(self, snr: float) -> float:
        return self.accuracy[self.snr_db.index(float(snr))]

    def confusion_normalized(self, regime: str) -> np.ndarray:
        return row_normalize(self.confusion[regime])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def predict(model, examples: Examples):
    p = model.predict_proba(examples.x)
    return np.argmax(p, axis=1)


def evaluate(bundle: ModelBundle, test: Examples, force: bool = False) -> EvalReport:
    """Score a bundle on its held-out split.

    Raises :class:`FingerprintMismatch` when ``test`` is not the split the
    bundle was trained against, unless ``force`` is set.
    """
    if not force:
        if test.fingerprint != bundle.dataset_fingerprint:
            raise FingerprintMismatch("test set comes from a different dataset than the bundle was trained on")
        if split_fingerprint(test) != bundle.test_split_fingerprint:
            raise FingerprintMismatch("test set is not the bundle's held-out split")
    model = bundle.to_model()
    pred = predict(model, test)
    n_classes = bundle.config.n_classes
    snrs, acc, n = accuracy_by_snr(pred, test.labels, test.snr_db)
    conf = confusion_matrix(pred, test.labels, n_classes)
    names = list(CLASS_NAMES[:n_classes]) if n_classes <= len(CLASS_NAMES) else [str(i) for i in range(n_classes)]
    summary = {"regime": bundle.config.regime, "ablation": bundle.config.ablation,
               "chance_level": 1.0 / n_classes, "overall_accuracy": float(np.mean(pred == test.labels))}
    if n_classes == len(CLASS_NAMES):
        summary["qam16_qam64"] = qam_confusion(conf, names)
    hist = {}
    if model.cm is not None and len(test):
        omega, phi = model.offsets(test.x)
        omega_hz = omega * test.sample_rate / (2 * np.pi)
        phi_deg = np.mod(np.degrees(phi), 360.0)
        hist = {"omega_hz": _histogram(omega_hz), "phi_deg": _histogram(phi_deg, 0.0, 360.0)}
        summary["omega_std_hz"] = float(omega_hz.std())
        summary["omega_mean_hz"] = float(omega_hz.mean())
        summary["omega_reference_std_hz"] = OMEGA_REFERENCE_HZ
        summary["phi_mode_deg"] = float(_mode(hist["phi_deg"]))
    return EvalReport(test.fingerprint, bundle.config.hash(), names, snrs, acc, n,
                      {bundle.config.regime: conf.tolist()}, histogram=hist, summary=summary)


def _mode(h: dict) -> float:
    i = int(np.argmax(h["counts"]))
    return 0.5 * (h["edges"][i] + h["edges"][i + 1])


@dataclass
class GainTable:
    snr_db: list
    mean: list
    std: list
    per_seed: list  # [seed][snr]

    def to_dict(self):
        return asdict(self)


def gain_table(reports, baselines) -> GainTable:
    """Per-SNR accuracy gain over paired baseline reports; mean and std across seeds."""
    snrs = reports[0].snr_db
    per = []
    for r, b in zip(reports, baselines):
        if r.snr_db != b.snr_db:
            raise ValueError("reports cover different SNR grids")
        per.append([a - c for a, c in zip(r.accuracy, b.accuracy)])
    arr = np.array(per)
    return GainTable(list(snrs), arr.mean(axis=0).tolist(), arr.std(axis=0).tolist(), arr.tolist())


def with_gains(report: EvalReport, name: str, table: GainTable) -> EvalReport:
    report.gains[name] = list(table.mean)
    report.gain_std[name] = list(table.std)
    return report


def merge_reports(reports) -> EvalReport:
    """Join reports of the two SNR regimes into one table."""
    reports = list(reports)
    base = reports[0]
    rows = {}
    conf, hist, summary = {}, {}, {}
    for r in reports:
        if r.dataset_fingerprint != base.dataset_fingerprint:
            raise FingerprintMismatch("reports come from different datasets")
        for s, a, n in zip(r.snr_db, r.accuracy, r.counts):
            rows[s] = (a, n)
        conf.update(r.confusion)
        for k, v in r.summary.items():
            summary[f"{r.summary.get('regime', 'all')}.{k}"] = v
        for k, v in r.histogram.items():
            hist[f"{r.summary.get('regime', 'all')}.{k}"] = v
    snrs = sorted(rows)
    return EvalReport(base.dataset_fingerprint, "+".join(r.config_hash for r in reports), base.class_names,
                      snrs, [rows[s][0] for s in snrs], [rows[s][1] for s in snrs], conf,
                      histogram=hist, summary=summary)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export(report: EvalReport, path, fmt: str = "csv") -> list[Path]:
    """Write the report under directory ``path``; returns the files written."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
        return [p]
    if fmt != "csv":
        raise ValueError(f"unknown export format {fmt!r}")
    chance = 1.0 / len(report.class_names)
    p = out / "accuracy_vs_snr.csv"
    _write_csv(p, ["snr_db", "accuracy", "n", "chance_level"],
               [[repr(s), repr(a), n, repr(chance)] for s, a, n in zip(report.snr_db, report.accuracy, report.counts)])
    written.append(p)
    if report.gains:
        names = sorted(report.gains)
        p = out / "gain_vs_snr.csv"
        header = ["snr_db"] + [f"{n}{suffix}" for n in names for suffix in ("_gain", "_std")]
        rows = []
        for i, s in enumerate(report.snr_db):
            row = [repr(s)]
            for n in names:
                row += [repr(report.gains[n][i]), repr(report.gain_std.get(n, [0.0] * len(report.snr_db))[i])]
            rows.append(row)
        _write_csv(p, header, rows)
        written.append(p)
    for regime, counts in sorted(report.confusion.items()):
        p = out / f"confusion_{regime}.csv"
        _write_csv(p, ["true\\pred"] + report.class_names,
                   [[name] + list(row) for name, row in zip(report.class_names, counts)])
        written.append(p)
        p = out / f"confusion_{regime}_normalized.csv"
        norm = row_normalize(counts)
        _write_csv(p, ["true\\pred"] + report.class_names,
                   [[name] + [repr(float(v)) for v in row] for name, row in zip(report.class_names, norm)])
        written.append(p)
    for key, h in sorted(report.histogram.items()):
        p = out / f"histogram_{key.replace('.', '_')}.csv"
        _write_csv(p, ["bin_lo", "bin_hi", "count"],
                   [[repr(lo), repr(hi), c] for lo, hi, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"])])
        written.append(p)
    return written


def load_report(path) -> EvalReport:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return EvalReport.from_dict(json.loads(p.read_text()))


def read_accuracy_csv(path) -> tuple[list, list]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["snr_db"]) for r in rows], [float(r["accuracy"]) for r in rows]
