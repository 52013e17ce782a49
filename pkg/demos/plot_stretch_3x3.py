"""
Two qutrits, including bound entanglement
=========================================

The same pipeline on 3x3 states. The Horodecki bound-entangled group is
PPT, so the partial-transpose test cannot flag it; this run shows how the
classifier fares there. Accuracies are reported, not asserted.

Sizes are cut down so the run fits in well under an hour on one core:
81 tokens per state make every step about twenty times dearer than 2x2.
"""

import tempfile
from pathlib import Path

from entformer.dataset import build_dataset, read_manifest
from entformer.training import TrainConfig, evaluate, finetune_classifier, format_report, pretrain

root = Path(tempfile.mkdtemp())

build_dataset(root / "pretrain", (3, 3), "pretrain", 7, scale_factor=2.5e-4)
pt = pretrain(read_manifest(root / "pretrain" / "manifest.json"),
              train_cfg=TrainConfig(epochs=5, batch_size=32, seed=7))
print(format_report(pt.report))

build_dataset(root / "classify", (3, 3), "classify", 11, scale_factor=2e-3)
build_dataset(root / "eval", (3, 3), "eval", 11, scale_factor=0.005)
train_m = read_manifest(root / "classify" / "manifest.json")
eval_m = read_manifest(root / "eval" / "manifest.json")

###############################################################################
# Full fine-tuning, then a probe that only trains the classifier head

for freeze in (False, True):
    res = finetune_classifier(pt.model, train_m, TrainConfig(epochs=5, batch_size=64, lr_max=1e-3, seed=7, freeze_encoder=freeze))
    print(format_report(evaluate(res.model, eval_m, "classification")))
