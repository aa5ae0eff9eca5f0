"""Train a small HQRNN and a classical LSTM baseline on a 20-engine fleet."""

import os
import tempfile
import time

from qrul import data as D
from qrul import model as M
from qrul import train as T

data_dir = os.environ.get("QRUL_DATA_DIR")
if data_dir is None:
    data_dir = tempfile.mkdtemp()
    D.write_synthetic_fd(data_dir, n_train=20, n_test=20, seed=3)
ds = D.load_subset(data_dir, seed=0, max_units=20)
print("constant-mean predictor test RMSE:", round(T.constant_predictor_rmse(ds), 2))

for mcfg in (M.HqrnnConfig(hidden=(8, 4), dense=(8, 8)), M.RnnConfig(hidden=(8, 4), dense=(8, 8))):
    cfg = T.TrainConfig(model=mcfg.to_dict(), epochs=5, batch_size=32, lr=1e-3, seeds=(0,))
    t0 = time.perf_counter()
    res = T.train_model(cfg, ds, seed=0)
    rec = T.evaluate(cfg, res.params, ds.test)
    print(f"{mcfg.name:>12}: {M.param_count(mcfg)} params, train MSE {[round(v, 4) for v in res.train_mse]}, "
          f"test RMSE {rec.rmse:.2f}, MAE {rec.mae:.2f} ({time.perf_counter() - t0:.0f}s)")

print("\npublished reference rows:")
for row in T.paper_rows():
    print(f"  {row['model']:>18}: RMSE {row['mean_rmse']} / best {row['best_rmse']}, params {row['n_params']}")
print("\nparameter counts here:", {n: M.param_count(M.RnnConfig.from_name(n)) for n in
                                   ("RNN-32-16-8-16-32", "RNN-20-16-4-8-16", "RNN-16-8-4-8-16", "RNN-8-4-2-4-8")},
      "HQRNN default:", M.param_count(M.HqrnnConfig()))
