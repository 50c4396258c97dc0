"""End-to-end training of CM+CNN cascades from modulation labels.

Every entry point takes :class:`~cmcnn.dataset.Examples`, which carries no
impairment truth, so offset ground truth cannot leak into the loss.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .bundle import ModelBundle, TrainConfig, build_model
from .classifier import Cascade
from .dataset import Examples
from .nn import Adam, softmax_cross_entropy

log = logging.getLogger(__name__)

ABLATION_CELLS = ("none", "freq_only", "phase_only", "both")


class TrainingDiverged(RuntimeError):
    pass


def split_dataset(examples: Examples, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Stratified (scheme, SNR) split into disjoint train/val/test views."""
    if len(examples) == 0:
        raise ValueError("cannot split an empty example set")
    f_train, f_val, _ = fractions
    rng = np.random.default_rng(seed)
    keys = np.stack([examples.labels.astype(float), examples.snr_db], axis=1)
    cells = np.unique(keys, axis=0)
    parts = ([], [], [])
    for cell in cells:
        idx = np.flatnonzero(np.all(keys == cell, axis=1))
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(round(len(idx) * f_train))
        n_va = min(int(round(len(idx) * f_val)), len(idx) - n_tr)
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr:n_tr + n_va])
        parts[2].append(idx[n_tr + n_va:])
    return tuple(examples.subset(np.sort(np.concatenate(p))) for p in parts)


def in_regime(examples: Examples, regime: str) -> Examples:
    mask = examples.snr_db >= 0 if regime == "non_negative" else examples.snr_db < 0
    return examples.subset(np.flatnonzero(mask))


def split_fingerprint(examples: Examples) -> str:
    h = hashlib.sha256(examples.fingerprint.encode())
    h.update(np.asarray(examples.indices, dtype="<i8").tobytes())
    return h.hexdigest()[:32]


def regime_splits(config: TrainConfig, examples: Examples):
    """The (train, val, test) views a config trains and is evaluated on."""
    return tuple(in_regime(p, config.regime) for p in split_dataset(examples, config.fractions, config.split_seed))


def accuracy(model: Cascade, x: np.ndarray, labels: np.ndarray, offsets=None) -> float:
    if len(labels) == 0:
        return float("nan")
    p = model.predict_proba(x, offsets=offsets)
    return float(np.mean(np.argmax(p, axis=1) == labels))


def mean_loss(model: Cascade, x, labels, batch: int = 512, offsets=None) -> float:
    total = 0.0
    for i in range(0, len(labels), batch):
        off = None if offsets is None else (offsets[0][i:i + batch], offsets[1][i:i + batch])
        loss, _, _ = softmax_cross_entropy(model.forward(x[i:i + batch], off), labels[i:i + batch])
        total += loss * len(labels[i:i + batch])
    return total / max(len(labels), 1)


def fit(model: Cascade, config: TrainConfig, train: tuple, val: tuple, train_offsets=None, val_offsets=None):
    """Mini-batch Adam on (x, labels) arrays; restores the best-validation weights.

    The offsets arguments replace the FCN output with supplied corrections;
    only oracle experiments use them.
    """
    x_tr, y_tr = train
    x_va, y_va = val
    _, _, s_shuffle = np.random.SeedSequence(config.seed).generate_state(3)
    rng = np.random.default_rng(int(s_shuffle))
    params = model.params()
    opt = Adam(params, lr=config.lr)
    curves = {"initial_loss": mean_loss(model, x_tr, y_tr, offsets=train_offsets),
              "train_loss": [], "val_accuracy": []}
    best_acc, best_epoch = -np.inf, -1
    best = [p.data.copy() for p in params]
    for epoch in range(config.epochs):
        perm = rng.permutation(len(y_tr))
        total = 0.0
        for i in range(0, len(perm), config.batch_size):
            b = perm[i:i + config.batch_size]
            off = None if train_offsets is None else (train_offsets[0][b], train_offsets[1][b])
            opt.zero_grad()
            loss, _, d = softmax_cross_entropy(model.forward(x_tr[b], off), y_tr[b])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {i // config.batch_size}")
            model.backward(d)
            opt.step()
            total += loss * len(b)
        curves["train_loss"].append(total / len(y_tr))
        acc = accuracy(model, x_va, y_va, val_offsets)
        curves["val_accuracy"].append(acc)
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, curves["train_loss"][-1], acc)
        # without a validation split, select on training loss
        score = acc if len(y_va) else -curves["train_loss"][-1]
        if score > best_acc:
            best_acc, best_epoch = score, epoch
            best = [p.data.copy() for p in params]
        elif epoch - best_epoch >= config.patience:
            break
    for p, b in zip(params, best):
        p.data[...] = b
    curves["best_epoch"] = best_epoch
    return curves, float(best_acc) if len(y_va) else float("nan")


def train(config: TrainConfig, examples: Examples) -> ModelBundle:
    """Train one regime/ablation cell; returns the best-validation checkpoint."""
    tr, va, te = regime_splits(config, examples)
    if len(tr) == 0:
        raise ValueError(f"no training examples in regime {config.regime}")
    model = build_model(config)
    curves, val_acc = fit(model, config, (tr.x, tr.labels), (va.x, va.labels))
    return ModelBundle.from_model(model, config, curves=curves, dataset_fingerprint=examples.fingerprint,
                                  test_split_fingerprint=split_fingerprint(te), val_accuracy=val_acc)


@dataclass
class MatrixResult:
    bundles: dict  # (ablation, regime, seed) -> ModelBundle
    reports: dict = field(default_factory=dict)  # same keys -> EvalReport
    gains: dict = field(default_factory=dict)  # (ablation, regime) -> GainTable

    def cell(self, ablation: str, regime: str, seed: int) -> ModelBundle:
        return self.bundles[(ablation, regime, seed)]


def train_matrix(base: TrainConfig, examples: Examples, ablations=ABLATION_CELLS, regimes=None,
                 seeds=None) -> MatrixResult:
    """Train every (ablation, regime, seed) cell on shared splits and tabulate gains vs the baseline."""
    from .evaluation import evaluate, gain_table

    regimes = [base.regime] if regimes is None else list(regimes)
    seeds = [base.seed] if seeds is None else list(seeds)
    ablations = list(ablations)
    if "none" not in ablations:
        ablations.insert(0, "none")
    result = MatrixResult({})
    for regime in regimes:
        for seed in seeds:
            for abl in ablations:
                cfg = replace(base, regime=regime, ablation=abl, seed=seed)
                log.info("training cell %s/%s/seed %d", abl, regime, seed)
                bundle = train(cfg, examples)
                _, _, te = regime_splits(cfg, examples)
                result.bundles[(abl, regime, seed)] = bundle
                result.reports[(abl, regime, seed)] = evaluate(bundle, te)
        for abl in ablations:
            result.gains[(abl, regime)] = gain_table(
                [result.reports[(abl, regime, s)] for s in seeds],
                [result.reports[("none", regime, s)] for s in seeds])
    return result
