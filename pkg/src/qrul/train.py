"""Training loop, metrics, multi-seed aggregation and run directories.

Run layout::

    runs/<name>/seed-<k>/checkpoint.npz     final-epoch parameters (used for evaluation)
    runs/<name>/seed-<k>/best_val.npz       lowest-validation-MSE parameters
    runs/<name>/seed-<k>/curves.csv         epoch, train_mse, val_mse
    runs/<name>/seed-<k>/eval.json          per-unit predictions and metrics
    runs/<name>/summary.{csv,json}          mean/best over seeds + ensemble row
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import model as M
from . import nn
from .data import PreparedDataset, WindowSet

log = logging.getLogger(__name__)

DEFAULT_SEEDS = tuple(range(10))


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: dict = field(default_factory=lambda: M.HqrnnConfig().to_dict())
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    val_fraction: float = 0.2
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    early_rul: float = 125.0
    window: int = 30
    # network regresses y / target_scale; predictions are rescaled back
    target_scale: float = 125.0
    clip_predictions: bool = False

    def __post_init__(self) -> None:
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.target_scale <= 0:
            raise ValueError("epochs/batch_size/lr/target_scale out of range")

    def model_config(self):
        return M.config_from_dict(self.model)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        return cls(**dict(d))


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]
    train_mse: list[float]
    val_mse: list[float]
    best_epoch: int
    seed: int
    seconds: float = 0.0


def _loss_and_grads(cfg, params: dict[str, nn.Tensor], x: np.ndarray, y: np.ndarray):
    for p in params.values():
        p.grad = None
    loss = nn.mse_loss(M.forward(cfg, params, x), y)
    loss.backward()
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    return float(loss.data), grads


def _mse(cfg, params, ws: WindowSet, scale: float) -> float:
    if len(ws) == 0:
        return float("nan")
    pred = M.predict(cfg, params, ws.x)
    return float(np.mean((pred - ws.y / scale) ** 2))


def train_model(config: TrainConfig, dataset: PreparedDataset, seed: int, *, progress: bool = False) -> TrainResult:
    """Train one model; deterministic given ``seed``.

    Recorded curves are MSE in scaled target units, the train value being the
    mean over batches of each epoch. Aborts with :class:`NumericalError` on a
    non-finite loss.
    """
    cfg = config.model_config()
    params = M.init_params(cfg, np.random.SeedSequence([seed, 0]))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    adam = nn.AdamState(lr=config.lr)
    arrays = {k: p.data for k, p in params.items()}
    train, val = dataset.train, dataset.val
    y_train = train.y / config.target_scale
    n = len(train)
    if n == 0:
        raise ValueError("training set is empty")
    curves_train, curves_val = [], []
    best = (math.inf, -1, {k: v.copy() for k, v in arrays.items()})
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = _loss_and_grads(cfg, params, train.x[idx], y_train[idx])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch + 1}, batch starting {start} "
                    f"(lr={config.lr}, seed={seed}); check learning rate and initialization"
                )
            nn.adam_step(adam, arrays, grads)
            total += loss * len(idx)
            seen += len(idx)
        curves_train.append(total / seen)
        v = _mse(cfg, params, val, config.target_scale)
        curves_val.append(v)
        if np.isfinite(v) and v < best[0]:
            best = (v, epoch + 1, {k: a.copy() for k, a in arrays.items()})
        if progress:
            log.info("seed %d epoch %d/%d train %.5f val %.5f", seed, epoch + 1, config.epochs, curves_train[-1], v)
    return TrainResult(
        params={k: a.copy() for k, a in arrays.items()},
        best_params=best[2],
        train_mse=curves_train,
        val_mse=curves_val,
        best_epoch=best[1],
        seed=seed,
        seconds=time.perf_counter() - t0,
    )


# metrics --------------------------------------------------------------------

@dataclass
class EvalRecord:
    unit: list[int]
    pred: list[float]
    target: list[float]
    rmse: float
    mae: float
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def rmse_mae(pred, target) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    err = pred - target
    return float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err)))


def predict_rul(config: TrainConfig, params: Mapping[str, np.ndarray], ws: WindowSet) -> np.ndarray:
    cfg = config.model_config()
    pred = M.predict(cfg, M.arrays_to_params(params), ws.x) * config.target_scale
    if config.clip_predictions:
        pred = np.clip(pred, 0.0, config.early_rul)
    return pred


def evaluate(config: TrainConfig, params: Mapping[str, np.ndarray], test: WindowSet, seed: int | None = None) -> EvalRecord:
    pred = predict_rul(config, params, test)
    rmse, mae = rmse_mae(pred, test.y)
    return EvalRecord(test.unit.tolist(), pred.tolist(), test.y.tolist(), rmse, mae, seed)


def aggregate_seeds(records: Sequence[EvalRecord], model_name: str = "model", n_params: int | None = None) -> dict:
    """Mean and best (minimum) RMSE/MAE over seeds, plus the seed-averaged-prediction metrics."""
    if not records:
        raise ValueError("no evaluation records to aggregate")
    rmses = np.array([r.rmse for r in records])
    maes = np.array([r.mae for r in records])
    out = {
        "model": model_name,
        "n_seeds": len(records),
        "mean_rmse": float(rmses.mean()),
        "best_rmse": float(rmses.min()),
        "mean_mae": float(maes.mean()),
        "best_mae": float(maes.min()),
        "n_params": n_params,
        "source": "measured",
    }
    preds = np.array([r.pred for r in records])
    if all(r.unit == records[0].unit for r in records):
        e_rmse, e_mae = rmse_mae(preds.mean(axis=0), records[0].target)
        out["ensemble_rmse"] = e_rmse
        out["ensemble_mae"] = e_mae
    return out


def paper_rows() -> list[dict]:
    return [
        {
            "model": name,
            "n_seeds": 10,
            "mean_rmse": r[0],
            "best_rmse": r[1],
            "mean_mae": r[2],
            "best_mae": r[3],
            "n_params": r[4],
            "source": "paper",
        }
        for name, r in M.PAPER_TABLE.items()
    ]


TABLE_FIELDS = ["model", "source", "n_seeds", "mean_rmse", "best_rmse", "mean_mae", "best_mae",
                "n_params", "ensemble_rmse", "ensemble_mae"]


def write_table(rows: Sequence[Mapping], csv_path, json_path=None) -> None:
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in TABLE_FIELDS})
    if json_path is not None:
        Path(json_path).write_text(json.dumps(list(rows), indent=2, sort_keys=True))


def constant_predictor_rmse(dataset: PreparedDataset) -> float:
    """Test RMSE of predicting the mean training target everywhere."""
    return rmse_mae(np.full(len(dataset.test), dataset.train.y.mean()), dataset.test.y)[0]


# run directories ------------------------------------------------------------

def run_seed(config: TrainConfig, dataset: PreparedDataset, seed: int, out_dir) -> EvalRecord:
    out = Path(out_dir) / f"seed-{seed}"
    out.mkdir(parents=True, exist_ok=True)
    res = train_model(config, dataset, seed)
    meta = config.to_dict()
    nn.save_checkpoint(out / "checkpoint.npz", res.params, seed=seed, config=meta)
    nn.save_checkpoint(out / "best_val.npz", res.best_params, seed=seed, config=meta)
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for e, (a, b) in enumerate(zip(res.train_mse, res.val_mse), start=1):
            w.writerow([e, repr(a), repr(b)])
    rec = evaluate(config, res.params, dataset.test, seed)
    body = rec.to_dict()
    body["best_val_epoch"] = res.best_epoch
    (out / "eval.json").write_text(json.dumps(body, indent=2, sort_keys=True))
    return rec


def _run_seed_job(args):
    config, dataset, seed, out_dir = args
    return run_seed(config, dataset, seed, out_dir)


def run_experiment(config: TrainConfig, dataset: PreparedDataset, out_dir, jobs: int = 1) -> dict:
    """Train every seed, write per-seed artifacts and ``summary.{csv,json}``.

    Results do not depend on ``jobs``: each seed is self-contained and the
    summary is assembled in seed order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(config, dataset, s, out_dir) for s in config.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_seed_job, tasks))
    else:
        records = [_run_seed_job(t) for t in tasks]
    cfg = config.model_config()
    summary = aggregate_seeds(records, cfg.name, M.param_count(cfg))
    write_table([summary], out_dir / "summary.csv", out_dir / "summary.json")
    return summary


def load_run_summary(run_dir) -> dict | None:
    """Summary of a finished run, rebuilt from ``eval.json`` files if needed; ``None`` if incomplete."""
    run_dir = Path(run_dir)
    summary = run_dir / "summary.json"
    if summary.exists():
        rows = json.loads(summary.read_text())
        return rows[0] if isinstance(rows, list) else rows
    evals = sorted(run_dir.glob("seed-*/eval.json"))
    if not evals:
        return None
    records = [EvalRecord(**{k: v for k, v in json.loads(p.read_text()).items() if k in EvalRecord.__dataclass_fields__})
               for p in evals]
    return aggregate_seeds(records, run_dir.name)
