"""``annlab`` command line: train, annihilate, classify, saturate, bench, report.

Every command resolves its parameters as defaults < ``--config`` JSON <
explicit flags, writes the resolved set to ``config.json`` in its output
directory and can be re-run from that file.  Failures print one line
``ERROR <ErrorClass>: <message>`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import annihilator as ann
from . import bench, variability
from .estimators import make_regressor
from .net import TrainConfig, VariedDepthNet, load_checkpoint, save_checkpoint
from .poly import from_text, to_text

log = logging.getLogger("annlab")

OUT_ENV = "ANNLAB_OUT"
DEFAULT_OUT_ROOT = "annlab_out"

_TRAIN_DEFAULTS = {
    "learning_rate": TrainConfig.learning_rate,
    "max_epochs": TrainConfig.max_epochs,
    "patience": TrainConfig.patience,
    "validation_fraction": TrainConfig.validation_fraction,
    "validation_mode": TrainConfig.validation_mode,
    "batch_size": None,
    "activation": "sigmoid",
    "hidden": [16, 16, 16],
    "depths": [1, 2, 3],
    "width": 16,
}
_DATA_DEFAULTS = {"csv": None, "column": "OT", "train_length": 2500, "n_train": 1000}

DEFAULTS = {
    "train": {"task": None, "model": "standard", "seed": 0, **_TRAIN_DEFAULTS, **_DATA_DEFAULTS},
    "annihilate": {"checkpoint": None, "tol": ann.DEFAULT_TOL, "degree": ann.DEFAULT_DEGREE_CAP,
                   "order_max": None, "samples": None, "seed": 0, "max_vars": ann.DEFAULT_MAX_VARS},
    "classify": {"companion": None, "inertia": None, "samples": None, "deficit": None,
                 "quadratic": None, "trajectories": False, "max_order": 4, "degree": 1,
                 "tol": ann.DEFAULT_TOL, "t_end": 5.0, "step": 1e-3, "y0": [-1.0, 0.0, 1.0]},
    "saturate": {"checkpoint": None, "probe_multiplier": 10.0, "grid": 400},
    "bench": {"suite": "synthetic", "fixture": False, "tasks": list(bench.SYNTHETIC_FUNCTIONS),
              "models": list(bench.MODEL_TAGS), "seeds": [0, 1, 2, 3, 4],
              "windows": list(bench.DEFAULT_WINDOWS), "jobs": 1,
              **_TRAIN_DEFAULTS, **_DATA_DEFAULTS},
    "report": {"records": None},
}
REQUIRED = {"train": ["task"], "annihilate": ["checkpoint"], "saturate": ["checkpoint"],
            "report": ["records"]}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _strs(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _add_train_flags(p):
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    p.add_argument("--validation-mode", dest="validation_mode", choices=["tail", "interleaved"])
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--activation", choices=["sigmoid", "tanh"])
    p.add_argument("--hidden", type=_ints, help="standard net widths, e.g. 16,16,16")
    p.add_argument("--depths", type=_ints, help="varied-depth subnet depths, e.g. 1,2,3")
    p.add_argument("--width", type=int)
    p.add_argument("--csv", help="CSV series file (series tasks)")
    p.add_argument("--column")
    p.add_argument("--train-length", dest="train_length", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="annlab", description=__doc__.splitlines()[0],
                     argument_default=argparse.SUPPRESS)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with parameters (flags win)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>/...)")
        return p

    p = command("train", "train a standard or varied-depth network")
    p.add_argument("--task", help="sin|complex_periodic|quadratic|tanh|series|fixture")
    p.add_argument("--model", choices=list(bench.MODEL_TAGS))
    p.add_argument("--seed", type=int)
    _add_train_flags(p)

    p = command("annihilate", "discover the annihilating relation of a checkpoint")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--tol", type=float)
    p.add_argument("--degree", type=int, help="degree cap")
    p.add_argument("--order-max", dest="order_max", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-vars", dest="max_vars", type=int)

    p = command("classify", "structural-variability classifiers")
    p.add_argument("--companion", help="c1,...,cn of D^n + c_n D^(n-1) + ... + c1")
    p.add_argument("--inertia", help="symmetric matrix, rows separated by ';'")
    p.add_argument("--samples", help="CSV with columns x,y (or t,y): minimal ODE order")
    p.add_argument("--deficit", help="CSV with column x and one column per function")
    p.add_argument("--quadratic", help="polynomial right-hand side in x0..x(n-1)")
    p.add_argument("--trajectories", action="store_true",
                   help="integrate the y' = e0 + e1 y + e2 y^2 sign lattice")
    p.add_argument("--max-order", dest="max_order", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--y0", type=_floats)

    p = command("saturate", "fit the exponential approach to the saturation constants")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--probe-multiplier", dest="probe_multiplier", type=float)
    p.add_argument("--grid", type=int)

    p = command("bench", "extrapolation sweeps")
    p.add_argument("--suite", choices=["synthetic", "series"])
    p.add_argument("--fixture", action="store_true", help="series suite on the bundled ETTh1 head")
    p.add_argument("--tasks", type=_strs)
    p.add_argument("--models", type=_strs)
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--windows", type=_floats)
    p.add_argument("--jobs", type=int)
    _add_train_flags(p)

    p = command("report", "regenerate tables from a record store")
    p.add_argument("records", nargs="?", help="bench output directory or records.jsonl")
    return parser


def resolve_config(command: str, ns: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    path = ns.pop("config", None)
    if path:
        with open(path) as fh:
            loaded = json.load(fh)
        loaded.pop("command", None)
        unknown = sorted(set(loaded) - set(cfg) - {"out"})
        if unknown:
            raise UsageError(f"unknown config field(s): {', '.join(unknown)}")
        cfg.update(loaded)
    cfg.update(ns)
    for key in REQUIRED.get(command, []):
        if cfg.get(key) in (None, ""):
            raise UsageError(f"missing required parameter '{key}'")
    return cfg


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT_ROOT)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    try:
        return TrainConfig(learning_rate=cfg["learning_rate"], max_epochs=cfg["max_epochs"],
                           batch_size=cfg["batch_size"], validation_fraction=cfg["validation_fraction"],
                           patience=cfg["patience"], seed=seed, validation_mode=cfg["validation_mode"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _model_params(cfg: dict, model: str) -> dict:
    if model == "standard":
        return {"hidden_layer_sizes": tuple(cfg["hidden"]), "activation": cfg["activation"]}
    return {"depths": tuple(cfg["depths"]), "width": cfg["width"], "activation": cfg["activation"]}


def _task(name: str, cfg: dict, windows=bench.DEFAULT_WINDOWS) -> bench.Task:
    if name in bench.SYNTHETIC_FUNCTIONS:
        return bench.synthetic_task(name, windows, n_train=cfg["n_train"])
    if name == "fixture":
        return bench.series_task(bench.fixture_spec(), "fixture:OT")
    if name == "series":
        if not cfg.get("csv"):
            raise UsageError("task 'series' needs --csv")
        return bench.series_task(bench.SeriesSpec(cfg["csv"], cfg["column"], cfg["train_length"]))
    raise UsageError(f"unknown task {name!r}; choose from "
                     f"{', '.join([*bench.SYNTHETIC_FUNCTIONS, 'series', 'fixture'])}")


def cmd_train(cfg: dict, out: Path) -> Path:
    if cfg["model"] not in bench.MODEL_TAGS:
        raise UsageError(f"model must be one of {bench.MODEL_TAGS}")
    task = _task(cfg["task"], cfg)
    tc = _train_config(cfg, cfg["seed"])
    train_mask = task.x <= task.border
    est = make_regressor(cfg["model"], random_state=cfg["seed"], **_model_params(cfg, cfg["model"]),
                         **bench.estimator_params(tc))
    est.fit(task.x[train_mask], task.y[train_mask])
    h = est.history_
    extra = {"task": task.task_id, "model_tag": cfg["model"], "seed": cfg["seed"],
             "input_shift": est.input_shift_, "input_scale": est.input_scale_,
             "border": task.border, "train_domain_normalized": [-1.0, 1.0]}
    path = out / "checkpoint.json"
    save_checkpoint(path, est.model_, extra)
    _write_json(out / "history.json", h.to_dict())
    val = h.val_loss[h.best_epoch] if h.val_loss else float("nan")
    print(f"train_loss {h.train_loss[h.best_epoch]!r} val_loss {val!r} "
          f"best_epoch {h.best_epoch} epochs {len(h.train_loss)}")
    return path


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _networks(model):
    if isinstance(model, VariedDepthNet):
        return [(f"subnet_depth{n.depth}", n) for n in ann.subnet_views(model)]
    return [("net", model)]


def cmd_annihilate(cfg: dict, out: Path) -> Path:
    model, payload = load_checkpoint(cfg["checkpoint"])
    reports = {}
    for name, net in _networks(model):
        rep = ann.minimal_annihilator(net, degree_cap=cfg["degree"], tol=cfg["tol"],
                                      samples=cfg["samples"], seed=cfg["seed"],
                                      order_max=cfg["order_max"], max_vars=cfg["max_vars"])
        reports[name] = rep.to_dict()
        status = f"order {rep.order} degree {rep.degree}" if rep.found else "no relation found"
        print(f"{name}: M={rep.M} {status}")
    path = out / "annihilator.json"
    _write_json(path, {"input_coordinates": "normalized (training window mapped to [-1, 1])",
                       "networks": reports,
                       "provenance": {"checkpoint": str(cfg["checkpoint"]),
                                      "checkpoint_sha256": _sha256(cfg["checkpoint"]),
                                      "seed": cfg["seed"], "tol": cfg["tol"],
                                      "degree": cfg["degree"], "samples": cfg["samples"],
                                      "order_max": cfg["order_max"]}})
    return path


def _matrix(text: str) -> np.ndarray:
    rows = [_floats(r) for r in str(text).split(";") if r.strip()]
    if not rows or any(len(r) != len(rows) for r in rows):
        raise UsageError("--inertia needs a square matrix, rows separated by ';'")
    return np.array(rows)


def _read_columns(path) -> dict:
    rows = bench.read_csv_rows(path)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    cols = {}
    for name in rows[0]:
        try:
            cols[name] = np.array([float(r[name]) for r in rows])
        except ValueError as exc:
            raise ValueError(f"{path}: column {name!r}: {exc}") from None
    return cols


def _abscissa(cols: dict, path) -> np.ndarray:
    for key in ("x", "t"):
        if key in cols:
            return cols.pop(key)
    raise ValueError(f"{path}: needs an 'x' or 't' column; found {', '.join(cols)}")


def cmd_classify(cfg: dict, out: Path) -> list[Path]:
    written = []
    if cfg["companion"] is not None:
        coeffs = _floats(cfg["companion"]) if isinstance(cfg["companion"], str) else cfg["companion"]
        spec = variability.companion_roots(coeffs)
        _write_json(out / "spectrum.json", spec.to_dict())
        print("spectrum:", ", ".join(spec.class_labels))
        written.append(out / "spectrum.json")
    if cfg["inertia"] is not None:
        A = _matrix(cfg["inertia"]) if isinstance(cfg["inertia"], str) else np.array(cfg["inertia"])
        sig = variability.inertia_signature(A)
        _write_json(out / "inertia.json", {"matrix": A, **sig._asdict()})
        print("inertia:", tuple(sig))
        written.append(out / "inertia.json")
    if cfg["samples"] is not None:
        cols = _read_columns(cfg["samples"])
        x = _abscissa(cols, cfg["samples"])
        y = cols.get("y")
        if y is None:
            raise ValueError(f"{cfg['samples']}: needs a 'y' column")
        order, P = variability.minimal_ode_order(x, y, max_order=cfg["max_order"],
                                                 degree=cfg["degree"], tol=cfg["tol"])
        _write_json(out / "order.json", {"order": order, "P": None if P is None else to_text(P),
                                         "degree": cfg["degree"], "tol": cfg["tol"]})
        print("minimal order:", order)
        written.append(out / "order.json")
    if cfg["deficit"] is not None:
        cols = _read_columns(cfg["deficit"])
        x = _abscissa(cols, cfg["deficit"])
        names = list(cols)
        rep = variability.common_annihilator([cols[n] for n in names], x, cfg["max_order"],
                                             tol=cfg["tol"])
        _write_json(out / "deficit.json", {"functions": names, **rep.to_dict()})
        print("common annihilator order:", rep.order)
        written.append(out / "deficit.json")
    if cfg["quadratic"] is not None:
        text = cfg["quadratic"]
        idx = [int(tok[1:]) for tok in text.replace("^", " ").replace("*", " ").split()
               if tok.startswith("x") and tok[1:].isdigit()]
        q = from_text(text, max(idx) + 1 if idx else 1)
        cls = variability.quadratic_ode_class(q)
        _write_json(out / "quadratic.json", {"q": to_text(q), **cls.to_dict()})
        written.append(out / "quadratic.json")
    if cfg["trajectories"]:
        bundles = [variability.integrate_class_trajectories(eps, cfg["y0"], (0.0, cfg["t_end"]),
                                                            cfg["step"])
                   for eps in variability.class_lattice()]
        variability.write_trajectories_csv(bundles, out / "trajectories.csv")
        written.append(out / "trajectories.csv")
    if not written:
        raise UsageError("classify needs at least one of --companion, --inertia, --samples, "
                         "--deficit, --quadratic, --trajectories")
    return written


def cmd_saturate(cfg: dict, out: Path) -> Path:
    model, payload = load_checkpoint(cfg["checkpoint"])
    prof = ann.saturation_profile(model, (-1.0, 1.0), cfg["probe_multiplier"], cfg["grid"])
    far = 1.0 + 10.0 * 2.0
    pred_far = float(model.predict(np.array([far]))[0])
    result = {"profile": prof.to_dict(), "far_field_x": far, "far_field_prediction": pred_far,
              "saturation_limit_plus": float(model.saturation_limit(+1)),
              "checkpoint_sha256": _sha256(cfg["checkpoint"]),
              "input_coordinates": "normalized (training window mapped to [-1, 1])"}
    if not isinstance(model, VariedDepthNet):
        result["constant_solutions"] = ann.constant_solutions(model)
    path = out / "saturation.json"
    _write_json(path, {k: _finite(v) for k, v in result.items()})
    print(f"f_inf+ {prof.f_inf_plus!r} kappa+ {prof.kappa_plus!r} r2 {prof.fit_r2!r}")
    return path


def _bench_tasks(cfg: dict) -> list[bench.Task]:
    windows = cfg["windows"]
    if cfg["fixture"]:
        return [bench.series_task(bench.fixture_spec(), "fixture:OT")]
    if cfg["suite"] == "series":
        if not cfg.get("csv"):
            raise UsageError("series suite needs --csv (or --fixture)")
        return [bench.series_task(bench.SeriesSpec(cfg["csv"], cfg["column"], cfg["train_length"]))]
    return [_task(name, cfg, windows) for name in cfg["tasks"]]


def cmd_bench(cfg: dict, out: Path) -> dict:
    tasks = _bench_tasks(cfg)
    store = bench.BenchStore(out)
    tc = _train_config(cfg, 0)
    for model in cfg["models"]:
        if model not in bench.MODEL_TAGS:
            raise UsageError(f"unknown model {model!r}")
    records = bench.run_sweep(tasks, cfg["models"], tc, cfg["windows"], cfg["seeds"], store,
                              n_jobs=cfg["jobs"], model_params={
                                  m: _model_params(cfg, m) for m in cfg["models"]})
    meta = {t.task_id: t.metadata.get("function", t.metadata.get("kind")) for t in tasks}
    paths = bench.report(records, out, store, {f"task {k}": v for k, v in meta.items()})
    for row in bench.table1(records):
        print(row["task"], f"standard {row['standard_mse']!r}", f"proposed {row['proposed_mse']!r}")
    return paths


def cmd_report(cfg: dict, out: Path) -> dict:
    src = Path(cfg["records"])
    store = bench.BenchStore(src if src.is_dir() else src.parent)
    records = store.load_records()
    if not records:
        raise ValueError(f"no records in {store.records_path}")
    return bench.report(records, out, store)


COMMANDS = {"train": cmd_train, "annihilate": cmd_annihilate, "classify": cmd_classify,
            "saturate": cmd_saturate, "bench": cmd_bench, "report": cmd_report}


def _default_out(command: str, cfg: dict) -> Path:
    root = _out_root() / command
    if command == "train":
        return root / f"{cfg['task']}-{cfg['model']}-seed{cfg['seed']}"
    if command in ("annihilate", "saturate"):
        return root / Path(cfg["checkpoint"]).parent.name
    if command == "bench":
        return root / ("fixture" if cfg["fixture"] else cfg["suite"])
    if command == "report":
        src = Path(cfg["records"])
        return src if src.is_dir() else src.parent
    return root


def run(argv=None) -> int:
    ns = vars(build_parser().parse_args(argv))
    logging.basicConfig(level=ns.pop("log_level", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    command = ns.pop("command")
    cfg = resolve_config(command, ns)
    out = Path(cfg.pop("out", None) or _default_out(command, cfg))
    fresh = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"command": command, "out": str(out), **cfg})
    try:
        COMMANDS[command](cfg, out)
    except Exception:
        # leave no half-made directory behind when nothing but the config was written
        if fresh and [p.name for p in out.iterdir()] == ["config.json"]:
            (out / "config.json").unlink()
            out.rmdir()
        raise
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except UsageError as exc:
        print(f"ERROR UsageError: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a single parseable line
        print(f"ERROR {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
