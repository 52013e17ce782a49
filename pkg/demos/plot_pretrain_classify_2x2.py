"""
Pretraining and classification on two qubits
============================================

Generate a small two-qubit corpus, pretrain the masked transformer on
reconstruction, then train a classifier head with and without a frozen
encoder. Takes a few minutes on one CPU core.
"""

import tempfile
from pathlib import Path

from entformer.dataset import build_dataset, read_manifest
from entformer.training import TrainConfig, evaluate, finetune_classifier, format_report, pretrain

root = Path(tempfile.mkdtemp())

###############################################################################
# 10k pretraining states in the full-scale group proportions

build_dataset(root / "pretrain", (2, 2), "pretrain", 7, scale_factor=1e-3)
pt = pretrain(read_manifest(root / "pretrain" / "manifest.json"), train_cfg=TrainConfig(seed=7))
print(format_report(pt.report))

###############################################################################
# A separate classification corpus and a held-out evaluation corpus

build_dataset(root / "classify", (2, 2), "classify", 11, scale_factor=20_000 / 1_900_000)
build_dataset(root / "eval", (2, 2), "eval", 11, scale_factor=0.02)
train_m = read_manifest(root / "classify" / "manifest.json")
eval_m = read_manifest(root / "eval" / "manifest.json")

for freeze in (False, True):
    res = finetune_classifier(pt.model, train_m, TrainConfig(epochs=10, seed=7, freeze_encoder=freeze))
    print(format_report(evaluate(res.model, eval_m, "classification")))
