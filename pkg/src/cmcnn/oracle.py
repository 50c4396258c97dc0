"""Truth-fed derotation: an upper reference for the learned correction.

On data distorted by a known constant (omega, phi), a cascade whose
derotation is driven by the true offsets shows what the correction
pathway can deliver when the estimator is perfect. Comparing it with the
baseline CNN and the learned CM+CNN brackets the learned estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bundle import TrainConfig, build_model
from .dataset import Dataset
from .trainer import accuracy, fit, regime_splits, train


@dataclass
class SandwichResult:
    baseline: float
    learned: float
    truth_fed: float
    # learned CM+CNN with its FCN output replaced by the truth at test time only
    learned_with_truth_swap: float

    def holds(self, margin: float = 0.02) -> bool:
        return self.truth_fed >= self.learned - margin and self.truth_fed >= self.baseline


def truth_offsets(dataset: Dataset, indices) -> tuple[np.ndarray, np.ndarray]:
    """([N, 1], [N, 1]) true (omega rad/sample, phi rad) for the given records."""
    if dataset.truth is None:
        raise ValueError("dataset was generated without impairment truth")
    omega, phi = dataset.truth.offsets(dataset.sample_rate)
    idx = np.asarray(indices)
    return omega[idx, None], phi[idx, None]


def oracle_sandwich(dataset: Dataset, config: TrainConfig) -> SandwichResult:
    """Train baseline, learned CM+CNN and truth-fed cascade on shared splits; report test accuracies."""
    ex = dataset.examples()
    base_cfg = replace(config, ablation="none")
    cm_cfg = replace(config, ablation="both")
    tr, va, te = regime_splits(cm_cfg, ex)

    base = train(base_cfg, ex).to_model()
    learned = train(cm_cfg, ex).to_model()

    oracle = build_model(cm_cfg)
    off = {name: truth_offsets(dataset, part.indices) for name, part in (("tr", tr), ("va", va), ("te", te))}
    fit(oracle, cm_cfg, (tr.x, tr.labels), (va.x, va.labels), off["tr"], off["va"])

    return SandwichResult(
        baseline=accuracy(base, te.x, te.labels),
        learned=accuracy(learned, te.x, te.labels),
        truth_fed=accuracy(oracle, te.x, te.labels, off["te"]),
        learned_with_truth_swap=accuracy(learned, te.x, te.labels, off["te"]),
    )
