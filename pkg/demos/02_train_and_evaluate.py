"""Generate a small dataset, train CM+CNN and a baseline, compare them per SNR.

A desk-sized run (8 schemes, SNR 0..18 dB, 60 frames per cell, 15 epochs)
that takes a few minutes. Accuracies at this size are noisy; the point is
the workflow.

    python demos/02_train_and_evaluate.py
"""

import numpy as np

from cmcnn import GenConfig, TrainConfig, evaluate, generate_dataset, train
from cmcnn.trainer import regime_splits

ds = generate_dataset(GenConfig(snr_grid=list(range(0, 20, 2)), frames_per_cell=60, master_seed=1))
examples = ds.examples()
print(f"dataset: {len(ds)} frames, fingerprint {ds.fingerprint[:16]}...")

reports = {}
for ablation in ("none", "both"):
    cfg = TrainConfig(regime="non_negative", ablation=ablation, epochs=15, patience=5)
    bundle = train(cfg, examples)
    _, _, test = regime_splits(cfg, examples)
    reports[ablation] = evaluate(bundle, test)
    print(f"{ablation:>5}: overall test accuracy {reports[ablation].overall_accuracy:.3f}")

print("\n SNR  baseline  CM+CNN")
for snr, a, b in zip(reports["none"].snr_db, reports["none"].accuracy, reports["both"].accuracy):
    print(f"{snr:4.0f}  {a:8.3f}  {b:6.3f}")

summary = reports["both"].summary
print(f"\nlearned omega spread: {summary['omega_std_hz']:.4f} Hz "
      f"(reference {summary['omega_reference_std_hz']} Hz), phi mode {summary['phi_mode_deg']:.0f} deg")
print(f"QAM16/QAM64 share of off-diagonal confusion: {summary['qam16_qam64']}")
print("confusion (row-normalized):")
print(np.round(reports["both"].confusion_normalized("non_negative"), 2))
