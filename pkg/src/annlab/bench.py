"""Extrapolation benchmarks for the standard and varied-depth networks.

A :class:`Task` is a sampled function with a training border ``b``: the
model trains on ``x <= b`` and is scored on cumulative windows
``(b, b + w]``.  Synthetic tasks use the raw input axis; series tasks use the
normalized sample index (training window mapped onto [-1, 1]), so window
lengths are read on each task's own x-axis.

Sweeps persist one JSON line per :class:`BenchRecord` to ``records.jsonl``
and can be resumed: finished ``(task, model, seed)`` jobs are skipped.
Wall-clock runtimes are logged, never written, so rerunning a sweep
reproduces every output file byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .estimators import make_regressor
from .net import TrainConfig
from .rng import make_rng

log = logging.getLogger(__name__)

DEFAULT_WINDOWS = (math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi)
MODEL_TAGS = ("standard", "proposed")

SYNTHETIC_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "complex_periodic": lambda x: np.sin(x) + 0.5 * np.sin(3 * x),
    "quadratic": lambda x: 0.1 * x ** 2,
    "tanh": np.tanh,
}
SYNTHETIC_NOTES = {
    "sin": "sin(x)",
    "complex_periodic": "sin(x) + 0.5*sin(3x) (our choice; minimal linear annihilator order 4)",
    "quadratic": "0.1*x^2 (scaled by 0.1 to stay in a sigmoid-friendly range)",
    "tanh": "tanh(x)",
}
REPORT_ASSUMPTIONS = (
    "windows pi/4..pi are used for both the synthetic and the series tables",
    "synthetic windows are in raw x units beyond the border; series windows in normalized sample-index units",
    "series input is the sample index mapped so the training window is [-1, 1]",
)
FIXTURE_PATH = Path(__file__).with_name("fixtures") / "etth1_head.csv"
FIXTURE_TRAIN_LENGTH = 20


class ColumnNotFoundError(KeyError):
    def __str__(self):
        return str(self.args[0])


class SeriesParseError(ValueError):
    pass


class ShortSeriesError(ValueError):
    pass


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    name: str
    train_domain: tuple = (-2 * math.pi, 2 * math.pi)
    n_train: int = 1000
    noise_std: float = 0.0

    def __post_init__(self):
        if self.name not in SYNTHETIC_FUNCTIONS:
            raise ValueError(f"unknown synthetic function {self.name!r}; "
                             f"choose from {sorted(SYNTHETIC_FUNCTIONS)}")
        if self.n_train < 100:
            raise ValueError("n_train must be at least 100")
        a, b = self.train_domain
        if not b > a:
            raise ValueError("train_domain must satisfy b > a")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass(frozen=True)
class SeriesSpec:
    csv_path: str
    value_column: str = "OT"
    train_length: int = 2500


@dataclass
class Task:
    task_id: str
    x: np.ndarray
    y: np.ndarray
    border: float
    metadata: dict = field(default_factory=dict)


@dataclass
class BenchRecord:
    model: str
    task: str
    window: float
    seed: int
    mse: float | None
    diverged: bool = False
    runtime_s: float = 0.0

    @property
    def key(self) -> tuple:
        return (self.model, self.task, self.window, self.seed)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("runtime_s")
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "BenchRecord":
        return cls(**json.loads(line))


# -- data ---------------------------------------------------------------------------

def gen_synthetic(spec: SyntheticSpec, seed: int = 0, extend: float = 0.0):
    """Equispaced ``(x, y)`` on the training domain, continued with the same
    spacing for ``extend`` beyond the right end."""
    a, b = (float(v) for v in spec.train_domain)
    dx = (b - a) / (spec.n_train - 1)
    n_extra = int(math.ceil(extend / dx - 1e-9)) if extend > 0 else 0
    x = a + dx * np.arange(spec.n_train + n_extra)
    x[spec.n_train - 1] = b
    y = SYNTHETIC_FUNCTIONS[spec.name](x)
    if spec.noise_std > 0:
        y = y + make_rng(seed, "noise", spec.name).normal(0.0, spec.noise_std, size=x.size)
    return x, y


def synthetic_task(name: str, windows=DEFAULT_WINDOWS, seed: int = 0, **spec_kw) -> Task:
    spec = SyntheticSpec(name, **spec_kw)
    x, y = gen_synthetic(spec, seed, extend=max(windows))
    return Task(name, x, y, float(x[spec.n_train - 1]),
                {"kind": "synthetic", "function": SYNTHETIC_NOTES[name],
                 "train_domain": list(spec.train_domain), "n_train": spec.n_train,
                 "noise_std": spec.noise_std})


def load_csv_series(spec: SeriesSpec) -> np.ndarray:
    """Values of ``spec.value_column`` in file order.

    Parse errors cite the 1-based data row (the header is not counted).
    """
    path = Path(spec.csv_path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        if spec.value_column not in columns:
            raise ColumnNotFoundError(
                f"column {spec.value_column!r} not found in {path}; available: {', '.join(columns)}")
        values = []
        for row_no, row in enumerate(reader, start=1):
            cell = row[spec.value_column]
            try:
                v = float(cell)
            except (TypeError, ValueError):
                raise SeriesParseError(f"row {row_no}: cannot parse {cell!r} as a number") from None
            if not math.isfinite(v):
                raise SeriesParseError(f"row {row_no}: non-finite value {cell!r}")
            values.append(v)
    values = np.array(values)
    if values.size:
        log.info("loaded %d rows from %s[%s]: mean %.4g, std %.4g, min %.4g, max %.4g",
                 values.size, path, spec.value_column, values.mean(), values.std(),
                 values.min(), values.max())
    if spec.train_length > values.size - 1:
        raise ShortSeriesError(
            f"series has {values.size} values; train_length {spec.train_length} needs at least "
            f"{spec.train_length + 1}")
    return values


def series_task(spec: SeriesSpec, task_id: str | None = None) -> Task:
    values = load_csv_series(spec)
    if spec.train_length < 2:
        raise ShortSeriesError("train_length must be at least 2")
    x = -1.0 + 2.0 * np.arange(values.size) / (spec.train_length - 1)
    return Task(task_id or f"series:{Path(spec.csv_path).stem}:{spec.value_column}", x, values,
                float(x[spec.train_length - 1]),
                {"kind": "series", "csv_path": str(spec.csv_path), "column": spec.value_column,
                 "train_length": spec.train_length})


def fixture_spec() -> SeriesSpec:
    return SeriesSpec(str(FIXTURE_PATH), "OT", FIXTURE_TRAIN_LENGTH)


def split_extrapolation(x, y, border: float, windows: Sequence[float]):
    """``((x_train, y_train), [(x_k, y_k), ...])`` with cumulative windows.

    Training data is ``x <= border``; window ``k`` holds ``border < x <= border + w_k``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    windows = [float(w) for w in windows]
    if not windows:
        raise WindowError("at least one window required")
    if any(w <= 0 for w in windows):
        raise WindowError(f"windows must be positive, got {windows}")
    if any(b <= a for a, b in zip(windows, windows[1:])):
        raise WindowError(f"windows must be strictly ascending, got {windows}")
    train = x <= border
    slack = 1e-9 * (1.0 + abs(border) + windows[-1])
    x_end = float(x.max())
    evals = []
    for w in windows:
        if x_end < border + w - slack:
            raise WindowError(
                f"window {w:.6g} needs data up to {border + w:.6g}, but data ends at {x_end:.6g} "
                f"(short by {border + w - x_end:.6g})")
        mask = (x > border) & (x <= border + w + slack)
        if not mask.any():
            raise WindowError(f"window {w:.6g} contains no samples")
        evals.append((x[mask], y[mask]))
    return (x[train], y[train]), evals


# -- running ---------------------------------------------------------------------------

def estimator_params(cfg: TrainConfig) -> dict:
    return {"learning_rate": cfg.learning_rate, "max_epochs": cfg.max_epochs,
            "patience": cfg.patience, "validation_fraction": cfg.validation_fraction,
            "validation_mode": cfg.validation_mode, "batch_size": cfg.batch_size}


def _run_job(task: Task, model_tag: str, seed: int, params: dict, windows):
    start = time.perf_counter()
    (xt, yt), evals = split_extrapolation(task.x, task.y, task.border, windows)
    est = make_regressor(model_tag, random_state=int(seed), **params[model_tag]).fit(xt, yt)
    diverged = bool(est.history_.diverged)
    records = []
    for w, (xe, ye) in zip(windows, evals):
        pred = est.predict(xe)
        mse = float(np.mean((pred - ye) ** 2))
        bad = diverged or not math.isfinite(mse)
        records.append(BenchRecord(model_tag, task.task_id, float(w), int(seed),
                                   None if bad else mse, bad))
    x_end = task.border + windows[-1] * (1 + 1e-9)
    keep = task.x <= x_end
    prediction = (task.x[keep], task.y[keep], est.predict(task.x[keep]))
    runtime = time.perf_counter() - start
    for r in records:
        r.runtime_s = runtime
    return records, prediction, est


class BenchStore:
    """Append-only record file plus per-job prediction CSVs in one directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.records_path = self.directory / "records.jsonl"
        self.predictions_dir = self.directory / "predictions"
        self.metadata_path = self.directory / "metadata.json"

    def load_records(self) -> list[BenchRecord]:
        if not self.records_path.exists():
            return []
        with open(self.records_path) as fh:
            return [BenchRecord.from_json(line) for line in fh if line.strip()]

    def done_jobs(self) -> set:
        return {(r.task, r.model, r.seed) for r in self.load_records()}

    def append(self, records: Sequence[BenchRecord]) -> None:
        with open(self.records_path, "a") as fh:
            for r in records:
                fh.write(r.to_json() + "\n")

    def save_metadata(self, metadata: dict) -> None:
        self.metadata_path.write_text(json.dumps(metadata, indent=1, sort_keys=True) + "\n")

    def load_metadata(self) -> dict:
        if not self.metadata_path.exists():
            return {}
        return json.loads(self.metadata_path.read_text())

    def prediction_path(self, task: str, model: str, seed: int) -> Path:
        safe = task.replace(os.sep, "_").replace(":", "_")
        return self.predictions_dir / f"{safe}__{model}__seed{seed}.csv"

    def save_prediction(self, task: str, model: str, seed: int, prediction) -> None:
        self.predictions_dir.mkdir(exist_ok=True)
        with open(self.prediction_path(task, model, seed), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y_true", "y_pred"])
            for xi, yi, pi in zip(*prediction):
                writer.writerow([repr(float(xi)), repr(float(yi)), repr(float(pi))])

    def load_prediction(self, task: str, model: str, seed: int):
        path = self.prediction_path(task, model, seed)
        if not path.exists():
            return None
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data[:, 0], data[:, 1], data[:, 2]


def run_extrapolation(task: Task, model_tag: str, cfg: TrainConfig | None = None,
                      windows=DEFAULT_WINDOWS, seeds=(0, 1, 2), store: BenchStore | None = None,
                      n_jobs: int = 1, model_params: dict | None = None) -> list[BenchRecord]:
    """Train ``model_tag`` on ``task`` once per seed and score every window."""
    return run_sweep([task], [model_tag], cfg, windows, seeds, store, n_jobs, model_params)


def run_sweep(tasks: Sequence[Task], model_tags=MODEL_TAGS, cfg: TrainConfig | None = None,
              windows=DEFAULT_WINDOWS, seeds=(0, 1, 2), store: BenchStore | None = None,
              n_jobs: int = 1, model_params: dict | None = None) -> list[BenchRecord]:
    """All ``(task, model, seed)`` jobs in a fixed order.

    Jobs already present in ``store`` are skipped; new results are appended
    in job order, so an interrupted sweep resumes to the same record file.
    ``model_params`` maps a model tag to extra estimator arguments
    (architecture, activation); the default is the benchmark architecture.
    """
    cfg = cfg or TrainConfig()
    for tag in model_tags:
        if tag not in MODEL_TAGS:
            raise ValueError(f"unknown model tag {tag!r}")
    windows = tuple(float(w) for w in windows)
    base = estimator_params(cfg)
    params = {m: {**base, **(model_params or {}).get(m, {})} for m in model_tags}
    done = store.done_jobs() if store is not None else set()
    jobs = [(t, m, int(s)) for t in tasks for m in model_tags for s in seeds
            if (t.task_id, m, int(s)) not in done]
    if jobs:
        log.info("running %d jobs (%d already done)", len(jobs), len(done))
    if n_jobs == 1:
        results = (_run_job(t, m, s, params, windows) for t, m, s in jobs)
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs, return_as="generator")(
            delayed(_run_job)(t, m, s, params, windows) for t, m, s in jobs)
    fresh = []
    for (t, m, s), (records, prediction, _) in zip(jobs, results):
        log.info("%s/%s/seed %d done in %.1f s", t.task_id, m, s, records[0].runtime_s)
        if any(r.diverged for r in records):
            log.warning("training diverged for %s/%s/seed %d", t.task_id, m, s)
        if store is not None:
            store.append(records)
            store.save_prediction(t.task_id, m, s, prediction)
        fresh.extend(records)
    if store is None:
        return fresh
    wanted = {(t.task_id, m, int(s)) for t in tasks for m in model_tags for s in seeds}
    return [r for r in store.load_records() if (r.task, r.model, r.seed) in wanted]


# -- reporting ----------------------------------------------------------------------------

def summarize(records: Sequence[BenchRecord]) -> list[dict]:
    """Mean/std (population) of MSE over seeds per ``(task, model, window)``."""
    if not records:
        raise ValueError("no records to summarize")
    task_order = list(dict.fromkeys(r.task for r in records))
    groups: dict[tuple, list] = {}
    for r in records:
        if r.mse is not None:
            groups.setdefault((r.task, r.model, r.window), []).append(r.mse)
    rows = []
    for key in sorted(groups, key=lambda k: (task_order.index(k[0]),
                                             MODEL_TAGS.index(k[1]) if k[1] in MODEL_TAGS else 99,
                                             k[2])):
        vals = np.array(groups[key])
        rows.append({"task": key[0], "model": key[1], "window": key[2],
                     "mean_mse": float(vals.mean()), "std_mse": float(vals.std()),
                     "n_seeds": int(vals.size)})
    return rows


def table1(records: Sequence[BenchRecord]) -> list[dict]:
    """Per task: MSE averaged over windows and seeds for each model."""
    out = []
    task_order = list(dict.fromkeys(r.task for r in records))
    for task in task_order:
        row = {"task": task}
        for m in MODEL_TAGS:
            vals = [r.mse for r in records if r.task == task and r.model == m and r.mse is not None]
            seeds = {r.seed for r in records if r.task == task and r.model == m and r.mse is not None}
            row[f"{m}_mse"] = float(np.mean(vals)) if vals else None
            row[f"{m}_seeds"] = len(seeds)
        out.append(row)
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows, comments=()):
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


def report(records: Sequence[BenchRecord], out_dir, store: BenchStore | None = None,
           metadata: dict | None = None) -> dict:
    """Write ``summary.csv``, ``table1.csv`` and ``trajectories.csv``.

    The trajectory file uses the lowest seed of each ``(task, model)`` pair
    and needs the prediction files of ``store``.  ``metadata`` becomes
    comment lines; it is kept in ``store`` so a later report without it
    writes the same files.
    """
    if store is not None:
        if metadata is None:
            metadata = store.load_metadata()
        else:
            store.save_metadata(metadata)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    comments = list(REPORT_ASSUMPTIONS)
    for key, val in sorted((metadata or {}).items()):
        comments.append(f"{key}: {val}")
    paths = {"summary": out_dir / "summary.csv", "table1": out_dir / "table1.csv"}
    _write_csv(paths["summary"], ["task", "model", "window", "mean_mse", "std_mse", "n_seeds"],
               summarize(records), comments)
    _write_csv(paths["table1"], ["task", "standard_mse", "proposed_mse", "standard_seeds",
                                 "proposed_seeds"], table1(records), comments)
    if store is not None:
        rows = []
        pairs = dict.fromkeys((r.task, r.model) for r in records)
        for task, model in pairs:
            seed = min(r.seed for r in records if r.task == task and r.model == model)
            pred = store.load_prediction(task, model, seed)
            if pred is None:
                continue
            for xi, yi, pi in zip(*pred):
                rows.append({"x": float(xi), "y_true": float(yi), "y_pred": float(pi),
                             "model": model, "task": task})
        paths["trajectories"] = out_dir / "trajectories.csv"
        _write_csv(paths["trajectories"], ["x", "y_true", "y_pred", "model", "task"], rows)
    return paths


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
