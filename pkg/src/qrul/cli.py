"""``qrul`` command line: prepare data, train, evaluate, report, analyze.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
Every command writes a ``manifest.json`` into its output directory holding the
effective configuration, input file hashes, seeds, version and timestamps.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import secrets
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis as A
from . import model as M
from . import qsim
from . import train as T
from .data import DataError, ParseError, PreparedDataset, file_sha256, load_subset

log = logging.getLogger("qrul")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
DATASET_FILE = "dataset.npz"
MANIFEST_FILE = "manifest.json"


class InputError(Exception):
    pass


def tool_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "0+unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list[int]
    input_hashes: dict = field(default_factory=dict)
    version: str = field(default_factory=tool_version)
    started: str = field(default_factory=_now)
    finished: str | None = None

    @property
    def run_hash(self) -> str:
        """Identity of the run: everything except version and timestamps."""
        blob = json.dumps([self.command, self.config, self.seeds, self.input_hashes], sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write(self, directory) -> Path:
        self.finished = _now()
        body = asdict(self)
        body["run_hash"] = self.run_hash
        path = Path(directory) / MANIFEST_FILE
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=str))
        return path

    @classmethod
    def read(cls, directory) -> "RunManifest":
        body = json.loads((Path(directory) / MANIFEST_FILE).read_text())
        body.pop("run_hash", None)
        return cls(**body)


def resolve_seed(seed: int | None) -> int:
    if seed is None:
        seed = secrets.randbelow(2**31)
        print(f"no --seed given; using generated seed {seed}")
    else:
        print(f"seed: {seed}")
    return seed


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _read_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{p}: invalid JSON ({e})")


# prepare ----------------------------------------------------------------------

def cmd_prepare(args) -> int:
    data_dir = Path(args.data_dir or os.environ.get("QRUL_DATA_DIR", "data"))
    seed = resolve_seed(args.seed)
    ds = load_subset(
        data_dir, args.subset, window=args.window, early_rul=args.early_rul,
        val_fraction=args.val_fraction, seed=seed, max_units=args.max_units, cap_test=not args.no_rul_cap,
    )
    out = Path(args.out or Path("cache") / f"{args.subset}-w{args.window}")
    out.mkdir(parents=True, exist_ok=True)
    ds.save(out / DATASET_FILE)
    config = {
        "data_dir": str(data_dir), "subset": args.subset, "window": args.window, "early_rul": args.early_rul,
        "val_fraction": args.val_fraction, "max_units": args.max_units, "cap_test": not args.no_rul_cap,
    }
    RunManifest("prepare", config, [seed], ds.meta.get("file_sha256", {})).write(out)
    summary = ds.summary()
    print(json.dumps({k: summary[k] for k in (
        "train_units_total", "train_units", "val_units", "n_kept_channels", "kept_channels",
        "min_train_run_length", "train_windows", "val_windows", "test_windows")}, indent=2))
    print(f"dataset cache written to {out / DATASET_FILE}")
    return EXIT_OK


# train --------------------------------------------------------------------------

def _model_from_args(args, base: dict) -> dict:
    model = dict(base)
    kind = args.model or model.get("kind", "hqrnn")
    if kind not in ("hqrnn", "rnn"):
        raise InputError(f"unknown model kind {kind!r}")
    if model.get("kind", kind) != kind:
        model = {}
    model["kind"] = kind
    if args.arch:
        model.update(M.RnnConfig.from_name(args.arch).to_dict())
    if args.hidden is not None:
        model["hidden"] = list(args.hidden)
    if args.dense is not None:
        model["dense"] = list(args.dense)
    if args.n_reps is not None and kind == "hqrnn":
        model["n_reps"] = args.n_reps
    return model


def build_train_config(args, dataset: PreparedDataset) -> T.TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    file_cfg = _read_json(args.config) if args.config else {}
    if "model" not in file_cfg and ("hidden" in file_cfg or "kind" in file_cfg):
        file_cfg = {"model": file_cfg}  # a bare model description
    model = _model_from_args(args, file_cfg.get("model", {}))
    model["window"] = dataset.window
    model["n_features"] = len(dataset.mask)
    cfg = {k: v for k, v in file_cfg.items() if k != "model"}
    for flag, key in (("epochs", "epochs"), ("batch", "batch_size"), ("lr", "lr")):
        if getattr(args, flag) is not None:
            cfg[key] = getattr(args, flag)
    cfg["window"] = dataset.window
    cfg["early_rul"] = dataset.early_rul
    cfg["model"] = model
    try:
        M.config_from_dict(model)
        return T.TrainConfig.from_dict(cfg)
    except TypeError as e:
        raise InputError(f"bad configuration: {e}")


def _dataset_dir(path) -> Path:
    p = Path(path)
    f = p / DATASET_FILE if p.is_dir() else p
    if not f.exists():
        raise InputError(f"dataset cache not found: {f} (run `qrul prepare` first)")
    return f


def cmd_train(args) -> int:
    ds_file = _dataset_dir(args.dataset)
    dataset = PreparedDataset.load(ds_file)
    cfg = build_train_config(args, dataset)
    base = resolve_seed(args.seed)
    seeds = args.seed_list if args.seed_list else tuple(base + i for i in range(args.seeds))
    cfg.seeds = tuple(seeds)
    mcfg = cfg.model_config()
    n_params = M.param_count(mcfg)
    print(f"model {mcfg.name}: {n_params} trainable parameters")
    out = Path(args.out or Path("runs") / mcfg.name)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("train", cfg.to_dict(), list(cfg.seeds),
                           {"dataset": file_sha256(ds_file), **dataset.meta.get("file_sha256", {})})
    manifest.config["dataset_path"] = str(ds_file)
    summary = T.run_experiment(cfg, dataset, out, jobs=args.jobs)
    manifest.write(out)
    print(json.dumps({k: summary.get(k) for k in T.TABLE_FIELDS}, indent=2))
    return EXIT_OK


# evaluate / report ----------------------------------------------------------------

def cmd_evaluate(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise InputError(f"run directory not found: {run}")
    try:
        manifest = RunManifest.read(run)
    except FileNotFoundError:
        raise InputError(f"{run} has no {MANIFEST_FILE}")
    cfg = T.TrainConfig.from_dict({k: v for k, v in manifest.config.items() if k != "dataset_path"})
    ds_path = Path(args.dataset) if args.dataset else Path(manifest.config["dataset_path"])
    dataset = PreparedDataset.load(_dataset_dir(ds_path))
    records = []
    for seed in cfg.seeds:
        ckpt = run / f"seed-{seed}" / ("best_val.npz" if args.best_val else "checkpoint.npz")
        if not ckpt.exists():
            log.warning("missing checkpoint %s; seed skipped", ckpt)
            continue
        params, _ = T.nn.load_checkpoint(ckpt)
        records.append(T.evaluate(cfg, params, dataset.test, seed))
    if not records:
        log.warning("run %s has no checkpoints", run)
        return EXIT_OK
    mcfg = cfg.model_config()
    summary = T.aggregate_seeds(records, mcfg.name, M.param_count(mcfg))
    name = "evaluation_best_val" if args.best_val else "evaluation"
    T.write_table([summary], run / f"{name}.csv", run / f"{name}.json")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.runs:
        raise InputError("no run directories given")
    rows = []
    for r in args.runs:
        s = T.load_run_summary(r)
        if s is None:
            log.warning("run %s is incomplete; listed without metrics", r)
            rows.append({"model": Path(r).name, "source": "incomplete"})
        else:
            rows.append(s)
    rows += T.paper_rows()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    T.write_table(rows, out, out.with_suffix(".json"))
    for row in rows:
        print(",".join(str(row.get(k, "")) for k in T.TABLE_FIELDS[:-2]))
    print(f"report written to {out}")
    return EXIT_OK


# analyze ------------------------------------------------------------------------

def _output_arg(text: str):
    if text == "sum":
        return "sum"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("output must be a qubit index or 'sum'")


def _load_circuit(path) -> qsim.CircuitSpec:
    p = Path(path)
    if not p.exists():
        raise InputError(f"circuit file not found: {p}")
    return qsim.CircuitSpec.from_json(p.read_text())


def cmd_analyze(args) -> int:
    seed = resolve_seed(args.seed)
    out = Path(args.out or Path("analysis") / args.what)
    out.mkdir(parents=True, exist_ok=True)
    spec = _load_circuit(args.circuit) if args.circuit else None
    config = {"what": args.what, "circuit": args.circuit}
    if args.what == "fisher":
        config.update(n_theta=args.n_theta, n_x=args.n_x)
        summary = A.write_fisher(A.fim_spectrum(args.n_theta, args.n_x, seed, spec=spec, jobs=args.jobs), out)
    elif args.what == "fourier":
        if spec is not None:
            raise InputError("the Fourier analysis runs on the built-in QDI circuit only")
        outputs = ["sum", 0, 1, 2, 3] if args.all_outputs else [args.output]
        config.update(samples=args.samples, threshold=args.threshold, outputs=outputs)
        summary = {}
        for o in outputs:
            sub = out if len(outputs) == 1 else out / f"output-{o}"
            rep = A.accessibility(args.samples, args.threshold, seed, o, jobs=args.jobs)
            summary[str(o)] = A.write_fourier(rep, sub)
            print(f"output {o}: {rep.accessible}/{rep.total} accessible components (threshold {args.threshold:g})")
    elif args.what == "essentiality":
        config.update(samples=args.samples, threshold=args.grad_threshold)
        rep = A.essential_parameters(args.samples, seed, spec, args.grad_threshold)
        summary = A.write_essentiality(rep, out)
        print(f"{rep.n_essential}/{len(rep.max_abs_grad)} parameters essential")
    else:
        original = spec if spec is not None else A.build_qdi_circuit()
        if not args.candidate:
            raise InputError("--what equivalence needs --candidate CIRCUIT.json")
        candidate = _load_circuit(args.candidate)
        pmap = _read_json(args.param_map) if args.param_map else None
        config.update(candidate=args.candidate, param_map=pmap, trials=args.trials)
        ok = A.verify_reduction(original, candidate, pmap, args.trials, seed)
        summary = {"equivalent": ok, "trials": args.trials, "seed": seed}
        (out / "equivalence.json").write_text(json.dumps(summary, indent=2))
        print("equivalent up to global phase" if ok else "NOT equivalent")
    RunManifest("analyze", config, [seed]).write(out)
    print(json.dumps(summary, indent=2, default=str))
    return EXIT_OK


# parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrul", description="Hybrid quantum-classical RUL models and circuit diagnostics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="parse raw C-MAPSS files into a windowed dataset cache")
    sp.add_argument("--data-dir", help="directory with train_/test_/RUL_ files (default $QRUL_DATA_DIR or ./data)")
    sp.add_argument("--subset", default="FD001")
    sp.add_argument("--window", type=int, default=30)
    sp.add_argument("--early-rul", type=float, default=125.0)
    sp.add_argument("--no-rul-cap", action="store_true", help="keep raw test RUL targets instead of capping")
    sp.add_argument("--val-fraction", type=float, default=0.2)
    sp.add_argument("--max-units", type=int, default=None, help="keep only the first N train and test engines")
    sp.add_argument("--seed", type=int, default=None, help="validation split seed")
    sp.add_argument("--out", help="cache directory (default cache/<subset>-w<window>)")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train one model over several seeds")
    sp.add_argument("--dataset", required=True, help="cache directory written by `prepare`")
    sp.add_argument("--model", choices=("hqrnn", "rnn"), default=None)
    sp.add_argument("--arch", help="classical baseline by name, e.g. RNN-20-16-4-8-16")
    sp.add_argument("--config", help="JSON file with training and/or model settings")
    sp.add_argument("--hidden", type=_int_list, default=None, help="recurrent sizes, e.g. 32,16,8")
    sp.add_argument("--dense", type=_int_list, default=None, help="dense head sizes, e.g. 16,32")
    sp.add_argument("--n-reps", type=int, default=None)
    sp.add_argument("--seeds", type=int, default=10, help="number of seeds: seed, seed+1, ...")
    sp.add_argument("--seed-list", type=_int_list, default=None, help="explicit seeds, overrides --seeds")
    sp.add_argument("--seed", type=int, default=None, help="first seed")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--jobs", type=int, default=_default_jobs())
    sp.add_argument("--out", help="run directory (default runs/<model name>)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="re-evaluate the checkpoints of a run on its test set")
    sp.add_argument("--run", required=True)
    sp.add_argument("--dataset", help="override the dataset cache recorded in the manifest")
    sp.add_argument("--best-val", action="store_true", help="use best-validation checkpoints")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="comparison table over runs plus published reference rows")
    sp.add_argument("--runs", nargs="*", default=[])
    sp.add_argument("--out", default="report.csv")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("analyze", help="circuit diagnostics")
    sp.add_argument("--what", choices=("fisher", "fourier", "essentiality", "equivalence"), required=True)
    sp.add_argument("--circuit", help="circuit JSON (default: built-in QDI circuit)")
    sp.add_argument("--candidate", help="candidate circuit JSON for --what equivalence")
    sp.add_argument("--param-map", help="JSON list of [source, sign, offset] per candidate parameter")
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--threshold", type=float, default=A.ACCESS_THRESHOLD)
    sp.add_argument("--grad-threshold", type=float, default=A.ESSENTIAL_THRESHOLD)
    sp.add_argument("--output", type=_output_arg, default="sum", help="qubit index or 'sum' (Fourier readout)")
    sp.add_argument("--all-outputs", action="store_true", help="Fourier analysis of every readout")
    sp.add_argument("--n-theta", type=int, default=100)
    sp.add_argument("--n-x", type=int, default=100)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--jobs", type=int, default=_default_jobs())
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except T.NumericalError as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, FileNotFoundError, ParseError, DataError, qsim.CircuitError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
