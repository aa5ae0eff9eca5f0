"""C-MAPSS preprocessing on a synthetic fleet written in the FD001 file format.

Point QRUL_DATA_DIR at the real files to run the same steps on FD001.
"""

import os
import tempfile

import numpy as np

from qrul import data as D

data_dir = os.environ.get("QRUL_DATA_DIR")
if data_dir is None:
    data_dir = tempfile.mkdtemp()
    D.write_synthetic_fd(data_dir, n_train=20, n_test=20, seed=3)
    print("using a synthetic fleet in", data_dir)

train = D.read_cmapss(os.path.join(data_dir, "train_FD001.txt"))
lengths = train.run_lengths()
print(f"{len(lengths)} engines, run lengths {min(lengths.values())}..{max(lengths.values())}")

mask = D.drop_constant_sensors(train)
print(f"{len(mask)} sensors vary:", mask.names)

# Piecewise-linear target: flat at 125 cycles, then counting down to failure.
print("labels for a 200-cycle run (every 25th):", D.label_piecewise_rul(200)[::25])

ds = D.load_subset(data_dir, window=30, early_rul=125, val_fraction=0.2, seed=0)
for k, v in ds.summary().items():
    if k not in ("kept_channels", "file_sha256", "val_unit_ids"):
        print(f"  {k}: {v}")
print("train window tensor:", ds.train.x.shape, "targets in", (float(ds.train.y.min()), float(ds.train.y.max())))
print("test targets (capped):", np.round(ds.test.y[:10]))
