import json

import numpy as np
import pytest

from qrul import model as M
from qrul import train as T


def tiny_config(kind="hqrnn", **kw):
    mc = (M.HqrnnConfig(hidden=(4,), dense=(4,)) if kind == "hqrnn" else M.RnnConfig(hidden=(4,), dense=(4,)))
    base = dict(model=mc.to_dict(), epochs=2, batch_size=32, seeds=(0,))
    base.update(kw)
    return T.TrainConfig(**base)


@pytest.mark.parametrize("kind", ["hqrnn", "rnn"])
def test_train_mse_decreases(small_dataset, kind):
    res = T.train_model(tiny_config(kind), small_dataset, 0)
    assert len(res.train_mse) == 2 and res.train_mse[1] < res.train_mse[0]


def test_zero_lr_keeps_parameters(small_dataset):
    cfg = tiny_config("rnn", lr=0.0)
    res = T.train_model(cfg, small_dataset, 3)
    init = M.params_to_arrays(M.init_params(cfg.model_config(), np.random.SeedSequence([3, 0])))
    for k in init:
        assert res.params[k].tobytes() == init[k].tobytes()


def test_same_seed_same_curves(small_dataset):
    a = T.train_model(tiny_config("rnn"), small_dataset, 1)
    b = T.train_model(tiny_config("rnn"), small_dataset, 1)
    assert a.train_mse == b.train_mse and a.val_mse == b.val_mse
    c = T.train_model(tiny_config("rnn"), small_dataset, 2)
    assert c.train_mse != a.train_mse


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_aborts(small_dataset):
    with pytest.raises(T.NumericalError, match="learning rate"):
        T.train_model(tiny_config("rnn", lr=float("inf")), small_dataset, 0)


def test_metrics():
    assert T.rmse_mae([1, 2, 3], [1, 2, 3]) == (0.0, 0.0)
    rmse, mae = T.rmse_mae([1, 2], [1, 4])
    assert rmse == pytest.approx(np.sqrt(2)) and mae == pytest.approx(1.0)
    target = np.linspace(0, 125, 50)
    rmse, mae = T.rmse_mae(np.full(50, 125.0), target)
    assert rmse >= mae


def _rec(rmse, mae=1.0, seed=0):
    return T.EvalRecord([1], [0.0], [0.0], rmse, mae, seed)


def test_aggregate():
    one = T.aggregate_seeds([_rec(15.0, 12.0)])
    assert one["mean_rmse"] == one["best_rmse"] == 15.0
    agg = T.aggregate_seeds([_rec(16.0), _rec(14.0), _rec(15.0)])
    assert agg["mean_rmse"] == pytest.approx(15.0) and agg["best_rmse"] == 14.0
    with pytest.raises(ValueError):
        T.aggregate_seeds([])


def test_paper_rows():
    rows = {r["model"]: r for r in T.paper_rows()}
    h = rows["HQRNN"]
    assert (h["mean_rmse"], h["best_rmse"], h["mean_mae"], h["best_mae"], h["n_params"]) == (15.46, 14.78, 12.25, 11.51, 6793)
    assert rows["RNN-20-16-4-8-16"]["mean_rmse"] == 16.37
    assert all(r["source"] == "paper" for r in rows.values())


def test_config_round_trip_and_validation():
    cfg = tiny_config(seeds=(3, 1))
    assert T.TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        tiny_config(seeds=(1, 1))
    with pytest.raises(ValueError):
        tiny_config(batch_size=0)


def test_run_experiment_layout_and_determinism(small_dataset, tmp_path):
    cfg = tiny_config("rnn", seeds=(0, 1), epochs=1)
    s1 = T.run_experiment(cfg, small_dataset, tmp_path / "a")
    T.run_experiment(cfg, small_dataset, tmp_path / "b", jobs=2)
    for name in ("checkpoint.npz", "best_val.npz", "curves.csv", "eval.json"):
        assert (tmp_path / "a" / "seed-1" / name).exists()
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    assert s1["n_seeds"] == 2 and s1["n_params"] == M.param_count(cfg.model_config())
    loaded = T.load_run_summary(tmp_path / "a")
    assert loaded["mean_rmse"] == s1["mean_rmse"]
    (tmp_path / "a" / "summary.json").unlink()
    assert T.load_run_summary(tmp_path / "a")["mean_rmse"] == pytest.approx(s1["mean_rmse"])
    assert T.load_run_summary(tmp_path / "empty") is None


def test_evaluate_perfect_and_clip(small_dataset):
    cfg = tiny_config("rnn", clip_predictions=True)
    res = T.train_model(tiny_config("rnn", epochs=0), small_dataset, 0)
    rec = T.evaluate(cfg, res.params, small_dataset.test)
    assert all(0 <= p <= 125 for p in rec.pred)
    assert rec.rmse >= rec.mae
