"""
Training on one abstraction level, testing on others
====================================================

Trains one model per training level (two single levels and the two mixed
datasets) and evaluates each on sketches of every level. Rows of the mAP
matrix are training levels, columns are evaluation levels. Takes several
minutes on one core.
"""

import os
from pathlib import Path

import numpy as np

from sketch3d import config as cfgmod
from sketch3d import dataset as ds
from sketch3d import pipeline

root = Path(os.environ.get("SKETCH3D_ROOT", ".")) / "demo03"
cfg = cfgmod.load_config(Path(__file__).with_name("toy.cfg"))

levels = [0.0, 0.25, 0.5, 0.75, 1.0]
ds.write_shape_set(root / "shapes", classes=5, per_class=30, seed=1)
ds.build_dataset(root / "shapes", root / "data", cfg, levels=levels, seed=1)

# "all" draws one level per shape from all five, "middle" from 0.25..0.75
train_levels = ["0.0", "1.0", "all", "middle"]
eval_levels = ["0.0", "0.5", "1.0"]
report = pipeline.run_study(root / "data", train_levels, eval_levels, cfg, out_dir=root / "study")

mAP = np.array(report["metrics"]["mAP"])
print("train \\ eval " + "".join(f"{e:>8s}" for e in eval_levels) + "   spread")
for name, row in zip(train_levels, mAP):
    print(f"{name:>12s} " + "".join(f"{v:8.3f}" for v in row) + f"{row.max() - row.min():9.3f}")
