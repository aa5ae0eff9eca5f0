"""C-MAPSS (FD001) ingestion, labeling, scaling and windowing.

Raw files are whitespace-separated ASCII with 26 columns: unit, cycle, three
operational settings and 21 sensors. ``RUL_FD001.txt`` holds one true RUL
per test unit.

The public pipeline (:func:`prepare_dataset`) takes the train and test files
separately and fits the channel mask and the scaler on train data only; no
entry point accepts a combined train+test table.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

log = logging.getLogger(__name__)

N_COLUMNS = 26
N_SETTINGS = 3
N_SENSORS = 21
CONSTANT_STD = 1e-8
SENSOR_NAMES = tuple(f"s{i}" for i in range(1, N_SENSORS + 1))


class ParseError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class CmapssTable:
    """Column arrays for one C-MAPSS file, sorted by (unit, cycle)."""

    unit: np.ndarray  # (N,) int
    cycle: np.ndarray  # (N,) int
    settings: np.ndarray  # (N, 3)
    sensors: np.ndarray  # (N, 21)

    def __len__(self) -> int:
        return len(self.unit)

    @property
    def units(self) -> np.ndarray:
        return np.unique(self.unit)

    def series(self, unit: int) -> np.ndarray:
        """Sensor rows of one unit, shape ``(L, 21)``."""
        return self.sensors[self.unit == unit]

    def run_lengths(self) -> dict[int, int]:
        u, n = np.unique(self.unit, return_counts=True)
        return dict(zip(u.tolist(), n.tolist()))

    def subset(self, units: Iterable[int]) -> "CmapssTable":
        mask = np.isin(self.unit, list(units))
        return CmapssTable(self.unit[mask], self.cycle[mask], self.settings[mask], self.sensors[mask])

    def to_text(self) -> str:
        """Serialize in the original whitespace format (round-trips through :func:`parse_cmapss`)."""
        buf = io.StringIO()
        for u, c, st, se in zip(self.unit, self.cycle, self.settings, self.sensors):
            vals = [str(int(u)), str(int(c))] + [repr(float(v)) for v in np.concatenate([st, se])]
            buf.write(" ".join(vals) + "\n")
        return buf.getvalue()


def parse_cmapss(stream: TextIO | str) -> CmapssTable:
    """Parse a C-MAPSS data file; blank lines are ignored."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = []
    for lineno, line in enumerate(stream, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise ParseError(f"line {lineno}: expected {N_COLUMNS} columns, got {len(tokens)}")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: non-numeric token ({exc})") from None
    if not rows:
        return CmapssTable(np.zeros(0, int), np.zeros(0, int), np.zeros((0, N_SETTINGS)), np.zeros((0, N_SENSORS)))
    arr = np.asarray(rows)
    unit = arr[:, 0].astype(int)
    cycle = arr[:, 1].astype(int)
    if np.any(arr[:, 0] != unit) or np.any(arr[:, 1] != cycle) or np.any(cycle < 1):
        raise ParseError("unit and cycle columns must hold positive integers")
    order = np.lexsort((cycle, unit))
    unit, cycle, arr = unit[order], cycle[order], arr[order]
    same = unit[1:] == unit[:-1]
    if np.any(same & (cycle[1:] <= cycle[:-1])):
        raise ParseError("duplicate cycle numbers within a unit")
    return CmapssTable(unit, cycle, arr[:, 2:5], arr[:, 5:])


def read_cmapss(path) -> CmapssTable:
    path = Path(path)
    with open(path) as fh:
        try:
            return parse_cmapss(fh)
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}") from None


def read_rul(path_or_stream) -> np.ndarray:
    if isinstance(path_or_stream, (str, Path)) and Path(path_or_stream).exists():
        text = Path(path_or_stream).read_text()
    else:
        text = path_or_stream.read() if hasattr(path_or_stream, "read") else str(path_or_stream)
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 1:
            raise ParseError(f"RUL line {lineno}: expected 1 column, got {len(tokens)}")
        try:
            values.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"RUL line {lineno}: non-numeric token {tokens[0]!r}") from None
    return np.asarray(values)


# channel selection and scaling ------------------------------------------------

@dataclass(frozen=True)
class ChannelMask:
    kept: tuple[int, ...]  # 0-based sensor indices

    def __len__(self) -> int:
        return len(self.kept)

    @property
    def names(self) -> list[str]:
        return [SENSOR_NAMES[i] for i in self.kept]


def drop_constant_sensors(train: CmapssTable, threshold: float = CONSTANT_STD) -> ChannelMask:
    """Keep sensors whose train-set std exceeds ``threshold``; settings are never kept."""
    if len(train) == 0:
        raise DataError("cannot select channels from an empty training set")
    std = train.sensors.std(axis=0)
    return ChannelMask(tuple(int(i) for i in np.flatnonzero(std > threshold)))


@dataclass(frozen=True)
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def fit_scaler(train: CmapssTable, mask: ChannelMask) -> ScalerStats:
    """Per-channel mean and population std on the training rows."""
    if len(mask) == 0:
        raise DataError("channel mask is empty: every sensor is constant")
    x = train.sensors[:, list(mask.kept)]
    std = x.std(axis=0)
    if np.any(std <= 0):
        raise DataError(f"zero-variance channels after masking: {np.flatnonzero(std <= 0).tolist()}")
    return ScalerStats(x.mean(axis=0), std)


def apply_scaler(stats: ScalerStats, values: np.ndarray) -> np.ndarray:
    return (np.asarray(values, dtype=float) - stats.mean) / stats.std


def scale_table(stats: ScalerStats, mask: ChannelMask, table: CmapssTable) -> np.ndarray:
    """Scaled kept-sensor matrix for every row of ``table``."""
    return apply_scaler(stats, table.sensors[:, list(mask.kept)])


# labels and windows -------------------------------------------------------------

def label_piecewise_rul(length: int, early_rul: float = 125, model: str = "piecewise") -> np.ndarray:
    """RUL for cycles ``1..length`` of a run that fails at its last cycle.

    ``model="linear"`` drops the cap (used only for comparison plots).
    """
    if length < 1:
        raise ValueError("series length must be >= 1")
    rul = length - np.arange(1, length + 1, dtype=float)
    if model == "piecewise":
        return np.minimum(rul, float(early_rul))
    if model == "linear":
        return rul
    raise ValueError(f"unknown degradation model {model!r}")


@dataclass
class WindowSet:
    """A stack of windows ``x (N, W, C)`` with targets and provenance."""

    x: np.ndarray
    y: np.ndarray
    unit: np.ndarray
    end_cycle: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def empty(cls, window: int, channels: int) -> "WindowSet":
        return cls(np.zeros((0, window, channels)), np.zeros(0), np.zeros(0, int), np.zeros(0, int))

    @classmethod
    def concat(cls, parts: list["WindowSet"], window: int, channels: int) -> "WindowSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(window, channels)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("x", "y", "unit", "end_cycle")))

    def subset(self, units: Iterable[int]) -> "WindowSet":
        m = np.isin(self.unit, list(units))
        return WindowSet(self.x[m], self.y[m], self.unit[m], self.end_cycle[m])


def make_train_windows(series: np.ndarray, labels: np.ndarray, window: int = 30, unit: int = 0) -> WindowSet:
    """All windows of one run-to-failure series.

    Window ``t`` (1-based start) covers cycles ``t .. t+W-1``; its target is the
    RUL at cycle ``t+W``. A series of length ``L`` yields ``L - W`` windows.
    """
    series = np.asarray(series, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n = len(series)
    if n < window + 1:
        log.warning("unit %s has %d cycles (< window + 1 = %d); skipped", unit, n, window + 1)
        return WindowSet.empty(window, series.shape[1])
    views = np.lib.stride_tricks.sliding_window_view(series, window, axis=0)  # (n-W+1, C, W)
    x = np.ascontiguousarray(np.swapaxes(views[: n - window], 1, 2))
    y = labels[window:]
    end = np.arange(window, n)  # 1-based cycle of each window's last row
    return WindowSet(x, y.copy(), np.full(n - window, unit), end)


def make_test_window(series: np.ndarray, true_rul: float, window: int = 30, unit: int = 0,
                     early_rul: float | None = 125) -> WindowSet:
    """The last ``W`` cycles of a truncated test series (left-padded with its first row)."""
    series = np.asarray(series, dtype=float)
    n = len(series)
    if n == 0:
        raise DataError(f"test unit {unit} has no rows")
    if n < window:
        series = np.concatenate([np.repeat(series[:1], window - n, axis=0), series])
    x = series[-window:][None]
    y = float(true_rul) if early_rul is None else min(float(true_rul), float(early_rul))
    return WindowSet(x, np.array([y]), np.array([unit]), np.array([n]))


def split_units(units: Iterable[int], val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded split of engine ids into (train, validation)."""
    units = sorted(int(u) for u in units)
    if not 0 <= val_fraction < 1:
        raise ValueError("val_fraction must be in [0, 1)")
    n_val = int(round(val_fraction * len(units)))
    perm = np.random.default_rng(seed).permutation(len(units))
    val = sorted(units[i] for i in perm[:n_val])
    train = sorted(set(units) - set(val))
    return train, val


# full pipeline -------------------------------------------------------------------

@dataclass
class PreparedDataset:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    mask: ChannelMask
    scaler: ScalerStats
    window: int
    early_rul: float
    seed: int
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "window": self.window,
            "early_rul": self.early_rul,
            "seed": self.seed,
            "kept_channels": list(self.mask.names),
            "n_kept_channels": len(self.mask),
            "train_windows": len(self.train),
            "val_windows": len(self.val),
            "test_windows": len(self.test),
            "train_units": len(np.unique(self.train.unit)),
            "val_units": len(np.unique(self.val.unit)),
            **self.meta,
        }

    def save(self, path) -> Path:
        """Write the cache as ``.npz``; ``header`` is a JSON string with W, mask, scaler, seed."""
        path = Path(path)
        header = {
            "format": "qrul-dataset-v1",
            "window": self.window,
            "early_rul": self.early_rul,
            "seed": self.seed,
            "mask": list(self.mask.kept),
            "scaler": self.scaler.to_dict(),
            "meta": self.meta,
        }
        arrays = {}
        for split in ("train", "val", "test"):
            ws: WindowSet = getattr(self, split)
            for f in ("x", "y", "unit", "end_cycle"):
                arrays[f"{split}_{f}"] = getattr(ws, f)
        with open(path, "wb") as fh:
            np.savez_compressed(fh, header=np.array(json.dumps(header)), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "PreparedDataset":
        with np.load(Path(path), allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != "qrul-dataset-v1":
                raise DataError(f"{path}: not a qrul dataset cache")
            splits = {
                s: WindowSet(*(z[f"{s}_{f}"] for f in ("x", "y", "unit", "end_cycle")))
                for s in ("train", "val", "test")
            }
        return cls(
            mask=ChannelMask(tuple(header["mask"])),
            scaler=ScalerStats(np.asarray(header["scaler"]["mean"]), np.asarray(header["scaler"]["std"])),
            window=header["window"],
            early_rul=header["early_rul"],
            seed=header["seed"],
            meta=header.get("meta", {}),
            **splits,
        )


def windows_for_table(table: CmapssTable, scaled: np.ndarray, window: int, early_rul: float,
                      model: str = "piecewise") -> WindowSet:
    parts = []
    for u in table.units:
        rows = table.unit == u
        series = scaled[rows]
        parts.append(make_train_windows(series, label_piecewise_rul(len(series), early_rul, model), window, int(u)))
    return WindowSet.concat(parts, window, scaled.shape[1])


def prepare_dataset(train: CmapssTable, test: CmapssTable, test_rul: np.ndarray, *, window: int = 30,
                    early_rul: float = 125, val_fraction: float = 0.2, seed: int = 0,
                    cap_test: bool = True, label_model: str = "piecewise") -> PreparedDataset:
    """Mask, scale, label and window the train/test tables.

    The validation split holds out whole engines. Mask and scaler are fit on
    every training engine (validation engines included, test never).
    """
    if len(train.units) == 0:
        raise DataError("training table has no units")
    test_units = test.units
    if len(test_units) != len(test_rul):
        raise DataError(f"{len(test_units)} test units but {len(test_rul)} ground-truth RUL values")
    mask = drop_constant_sensors(train)
    scaler = fit_scaler(train, mask)
    scaled_train = scale_table(scaler, mask, train)
    all_train = windows_for_table(train, scaled_train, window, early_rul, label_model)
    tr_units, val_units = split_units(train.units, val_fraction, seed)
    scaled_test = scale_table(scaler, mask, test)
    tests = [
        make_test_window(scaled_test[test.unit == u], rul, window, int(u), early_rul if cap_test else None)
        for u, rul in zip(test_units, test_rul)
    ]
    return PreparedDataset(
        train=all_train.subset(tr_units),
        val=all_train.subset(val_units),
        test=WindowSet.concat(tests, window, len(mask)),
        mask=mask,
        scaler=scaler,
        window=window,
        early_rul=float(early_rul),
        seed=seed,
        meta={
            "train_units_total": int(len(train.units)),
            "min_train_run_length": int(min(train.run_lengths().values())),
            "val_unit_ids": val_units,
            "cap_test": cap_test,
            "label_model": label_model,
        },
    )


def fd_paths(data_dir, subset: str = "FD001") -> dict[str, Path]:
    d = Path(data_dir)
    return {
        "train": d / f"train_{subset}.txt",
        "test": d / f"test_{subset}.txt",
        "rul": d / f"RUL_{subset}.txt",
    }


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_subset(data_dir, subset: str = "FD001", max_units: int | None = None, **kwargs) -> PreparedDataset:
    """Read and prepare one subset; ``max_units`` keeps the first N train and test engines."""
    paths = fd_paths(data_dir, subset)
    for p in paths.values():
        if not p.exists():
            raise FileNotFoundError(f"missing data file: {p}")
    train, test, rul = read_cmapss(paths["train"]), read_cmapss(paths["test"]), read_rul(paths["rul"])
    if max_units is not None:
        if max_units < 1:
            raise DataError("max_units must be positive")
        if len(test.units) != len(rul):
            raise DataError(f"{len(test.units)} test units but {len(rul)} ground-truth RUL values")
        train = train.subset(train.units[:max_units])
        rul = rul[:max_units]
        test = test.subset(test.units[:max_units])
    ds = prepare_dataset(train, test, rul, **kwargs)
    ds.meta["subset"] = subset
    ds.meta["max_units"] = max_units
    ds.meta["file_sha256"] = {k: file_sha256(p) for k, p in paths.items()}
    return ds


# synthetic data -------------------------------------------------------------------

# Sensors that are flat in FD001 (1-based: 1, 5, 6, 10, 16, 18, 19).
_FLAT_SENSORS = (0, 4, 5, 9, 15, 17, 18)


def synthesize_cmapss(n_units: int = 20, seed: int = 0, min_life: int = 128, max_life: int = 300,
                      truncate: bool = False, fleet_seed: int = 0) -> tuple[CmapssTable, np.ndarray]:
    """FD001-shaped synthetic fleet with an exponential degradation signal.

    Fourteen sensors drift with a unit-specific health index plus noise; the
    other seven are constant. With ``truncate=True`` each series is cut at a
    random cycle and the true remaining life is returned (test-file semantics);
    otherwise the returned RUL vector is all zeros. ``fleet_seed`` fixes the
    sensor baselines and gains, so train and test fleets drawn with different
    ``seed`` values share the same physics.
    """
    fleet = np.random.default_rng(fleet_seed)
    base = fleet.uniform(10, 600, N_SENSORS)
    gain = fleet.uniform(0.5, 2.0, N_SENSORS) * fleet.choice([-1, 1], N_SENSORS)
    rng = np.random.default_rng([fleet_seed, seed])
    rows_u, rows_c, rows_st, rows_se, ruls = [], [], [], [], []
    for u in range(1, n_units + 1):
        life = int(rng.integers(min_life, max_life + 1))
        t = np.arange(1, life + 1)
        onset = rng.uniform(0.3, 0.6) * life
        health = np.where(t > onset, np.expm1((t - onset) / (life - onset) * 2.0) / np.expm1(2.0), 0.0)
        sens = base + gain * 5 * health[:, None] + rng.normal(0, 0.3, (life, N_SENSORS))
        sens[:, list(_FLAT_SENSORS)] = base[list(_FLAT_SENSORS)]
        keep = life
        if truncate:
            keep = int(rng.integers(max(10, life // 4), life - 5))
            ruls.append(float(life - keep))
        rows_u.append(np.full(keep, u))
        rows_c.append(t[:keep])
        rows_st.append(np.round(rng.normal(0, 0.002, (keep, N_SETTINGS)), 4))
        rows_se.append(np.round(sens[:keep], 4))
    table = CmapssTable(np.concatenate(rows_u), np.concatenate(rows_c), np.concatenate(rows_st), np.concatenate(rows_se))
    return table, np.asarray(ruls if truncate else np.zeros(n_units))


def write_synthetic_fd(directory, subset: str = "FD001", n_train: int = 20, n_test: int = 20, seed: int = 0) -> dict:
    """Write train/test/RUL files in the C-MAPSS text format to ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train, _ = synthesize_cmapss(n_train, seed)
    test, rul = synthesize_cmapss(n_test, seed + 1, truncate=True)
    paths = fd_paths(directory, subset)
    paths["train"].write_text(train.to_text())
    paths["test"].write_text(test.to_text())
    paths["rul"].write_text("".join(f"{int(r)}\n" for r in rul))
    return paths
