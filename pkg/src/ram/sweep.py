"""One-parameter linear search against a baseline run configuration."""

from __future__ import annotations

import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .dataset import ConfigError
from .nncore import save_params
from .report import FileSink, MemorySink, MetricsRecord, read_metrics
from .training import HyperParams, RunConfig, TrainData, train

log = logging.getLogger(__name__)

HYPER_FIELDS = {f.name: f.type for f in fields(HyperParams)}


@dataclass
class SweepSpec:
    parameter: str
    values: List[Any]
    seeds: List[int] = field(default_factory=lambda: [0])
    epochs_override: Optional[int] = None

    def validate(self) -> "SweepSpec":
        if self.parameter not in HYPER_FIELDS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}; "
                              f"choose from {', '.join(HYPER_FIELDS)}")
        if not self.values:
            raise ConfigError("sweep values must be non-empty")
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")
        if self.epochs_override is not None and self.epochs_override < 0:
            raise ConfigError("epochs_override must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "SweepSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _coerce(parameter: str, value) -> Dict[str, Any]:
    """Map one swept value to HyperParams overrides.

    ``optimizer`` values may carry their learning rate as ``"name@lr"``
    because optimizers are only comparable at their own learning rate.
    """
    typ = HYPER_FIELDS[parameter]
    if parameter == "optimizer":
        name, _, lr = str(value).partition("@")
        out: Dict[str, Any] = {"optimizer": name.lower()}
        if lr:
            out["learning_rate"] = float(lr)
        return out
    if typ == "int":
        if isinstance(value, bool) or float(value) != int(float(value)):
            raise ConfigError(f"{parameter} needs an integer, got {value!r}")
        return {parameter: int(float(value))}
    if typ == "float":
        return {parameter: float(value)}
    return {parameter: value}


@dataclass
class SweepRun:
    parameter: str
    value: Any
    seed: int
    config: RunConfig

    @property
    def key(self) -> str:
        return os.path.join(f"{self.parameter}={self.value}", f"seed={self.seed}")


def expand(spec: SweepSpec, baseline) -> List[SweepRun]:
    """Cartesian product of ``values x seeds``, in sweep-spec order.

    ``baseline`` is a :class:`RunConfig` or bare :class:`HyperParams`.  Each
    run equals the baseline except for the swept field (plus the paired
    learning rate for ``name@lr`` optimizer values), the seed and, if set,
    the epoch override.
    """
    spec.validate()
    base = baseline if isinstance(baseline, RunConfig) else RunConfig(hyper=baseline)
    runs = []
    for value in spec.values:
        overrides = _coerce(spec.parameter, value)
        if spec.epochs_override is not None:
            overrides.setdefault("epochs", spec.epochs_override)
        hyper = replace(base.hyper, **overrides).validate()
        for seed in spec.seeds:
            run_id = f"{spec.parameter}={value}/seed={seed}"
            runs.append(SweepRun(spec.parameter, value, int(seed),
                                 replace(base, hyper=hyper, seed=int(seed), run_id=run_id)))
    return runs


@dataclass
class RunResult:
    parameter: str
    value: Any
    config: RunConfig
    final_accuracy: float
    best_accuracy: float
    wall_seconds: float
    seconds_per_epoch: float
    train_seconds_per_epoch: float
    status: str  # completed | diverged | aborted
    message: str = ""
    metrics_path: Optional[str] = None
    records: List[MetricsRecord] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("records")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        d = dict(d)
        d["config"] = RunConfig.from_dict(d["config"])
        d.pop("records", None)
        return cls(**d)


_WORKER_DATA: Optional[TrainData] = None


def _init_worker(data):
    global _WORKER_DATA
    _WORKER_DATA = data


def _execute(run: SweepRun, data: TrainData, out_dir: Optional[str]) -> RunResult:
    run_dir = os.path.join(out_dir, run.key) if out_dir else None
    metrics_path = None
    try:
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)
            metrics_path = os.path.join(run_dir, "metrics.csv")
            sink = FileSink(metrics_path)
            run.config.save(os.path.join(run_dir, "config.json"))
        else:
            sink = MemorySink()
        try:
            res = train(run.config, data, sink, checkpoint_dir=run_dir)
        finally:
            sink.close()
        epochs = max(res.epochs_run, 1)
        result = RunResult(run.parameter, run.value, run.config, res.final_accuracy, res.best_accuracy,
                           res.wall_seconds, res.wall_seconds / epochs, res.train_seconds / epochs,
                           res.status, res.message, metrics_path, res.records)
        if run_dir:
            save_params(os.path.join(run_dir, "checkpoint.npz"), res.params.tensors, res.params.meta())
    except Exception as exc:  # a crashed run must not take the sweep down
        log.error("run %s aborted: %s", run.key, exc)
        result = RunResult(run.parameter, run.value, run.config, float("nan"), float("nan"),
                           0.0, float("nan"), float("nan"), "aborted",
                           "".join(traceback.format_exception_only(type(exc), exc)).strip(), metrics_path)
    if run_dir:
        with open(os.path.join(run_dir, "result.json"), "w") as fh:
            json.dump(result.to_dict(), fh, indent=2)
    return result


def _execute_in_worker(run, out_dir):
    return _execute(run, _WORKER_DATA, out_dir)


def run_sweep(spec: SweepSpec, baseline, data: TrainData, parallelism: int = 1,
              out_dir: Optional[str] = None) -> List[RunResult]:
    """Train every expanded run; results come back in sweep-spec order.

    With ``out_dir`` each run writes ``<param>=<value>/seed=<s>/`` holding
    ``metrics.csv`` (+ ``.jsonl``), ``result.json``, ``config.json`` and
    ``checkpoint.npz``.
    """
    runs = expand(spec, baseline)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
            json.dump(asdict(spec), fh, indent=2)
    if parallelism <= 1:
        return [_execute(r, data, out_dir) for r in runs]
    with ProcessPoolExecutor(max_workers=parallelism, initializer=_init_worker, initargs=(data,)) as pool:
        futures = [pool.submit(_execute_in_worker, r, out_dir) for r in runs]
        return [f.result() for f in futures]


def load_results(sweep_dir) -> List[RunResult]:
    """Collect ``result.json`` files under a sweep directory, in the order the sweep spec listed them."""
    found = []
    for root, _, files in os.walk(sweep_dir):
        if "result.json" in files:
            with open(os.path.join(root, "result.json")) as fh:
                res = RunResult.from_dict(json.load(fh))
            if res.metrics_path and os.path.exists(res.metrics_path):
                res.records = read_metrics(res.metrics_path)
            elif os.path.exists(os.path.join(root, "metrics.csv")):
                res.records = read_metrics(os.path.join(root, "metrics.csv"))
            found.append(res)
    spec_path = os.path.join(sweep_dir, "sweep.json")
    if os.path.exists(spec_path):
        with open(spec_path) as fh:
            spec = json.load(fh)
        order = {str(v): i for i, v in enumerate(spec["values"])}
        seeds = {s: i for i, s in enumerate(spec.get("seeds", [0]))}
        found.sort(key=lambda r: (order.get(str(r.value), len(order)), seeds.get(r.config.seed, 0)))
    return found


# ---------------------------------------------------------------- trends

@dataclass
class TrendRow:
    value: Any
    runs: int
    completed: int
    accuracy: float
    best_accuracy: float
    seconds_per_epoch: float
    train_seconds_per_epoch: float


@dataclass
class TrendReport:
    parameter: str
    rows: List[TrendRow]
    time_r2: Optional[float] = None
    time_constant: bool = False
    best_value: Any = None
    time_increasing: Optional[bool] = None
    accuracy_increasing: Optional[bool] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def linear_r2(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Coefficient of determination of the least-squares line; ``None`` if ``ys`` is constant."""
    x, y = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if len(x) < 2 or ss_tot == 0.0:
        return None
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    return 1.0 - ss_res / ss_tot


def _strictly_increasing(vals):
    return all(b > a for a, b in zip(vals, vals[1:]))


def compare(results: Sequence[RunResult], time_field: str = "train_seconds_per_epoch") -> TrendReport:
    """Aggregate seeds per swept value and compute trend checks.

    Time trends use ``time_field`` (pure training time by default, so the
    evaluation stride does not distort them).
    """
    parameter = results[0].parameter if results else ""
    groups: Dict[str, List[RunResult]] = {}
    order: List[Any] = []
    for r in results:
        k = str(r.value)
        if k not in groups:
            groups[k] = []
            order.append(r.value)
        groups[k].append(r)
    rows = []
    for v in order:
        rs = groups[str(v)]
        done = [r for r in rs if r.status == "completed"]
        mean = (lambda attr: float(np.mean([getattr(r, attr) for r in done])) if done else float("nan"))
        rows.append(TrendRow(v, len(rs), len(done), mean("final_accuracy"), mean("best_accuracy"),
                             mean("seconds_per_epoch"), mean("train_seconds_per_epoch")))
    report = TrendReport(parameter, rows)
    ok = [r for r in rows if r.completed]
    if len(ok) < 2:
        report.notes.append("fewer than two completed values; no trends computed")
        return report
    times = [getattr(r, time_field) for r in ok]
    accs = [r.accuracy for r in ok]
    report.best_value = ok[int(np.argmax(accs))].value
    report.accuracy_increasing = _strictly_increasing(accs)
    report.time_increasing = _strictly_increasing(times)
    try:
        xs = [float(r.value) for r in ok]
    except (TypeError, ValueError):
        report.notes.append("non-numeric values; no linear fit")
        return report
    r2 = linear_r2(xs, times)
    if r2 is None:
        report.time_constant = True
        report.notes.append("time is constant across values; R^2 undefined")
    else:
        report.time_r2 = r2
    return report


def format_trend(report: TrendReport) -> str:
    lines = [f"{'value':>10} {'runs':>4} {'accuracy':>9} {'best':>7} {'s/epoch':>9} {'train s/ep':>10}"]
    for r in report.rows:
        lines.append(f"{str(r.value):>10} {r.completed:>2}/{r.runs:<1} {r.accuracy:9.4f} {r.best_accuracy:7.4f} "
                     f"{r.seconds_per_epoch:9.3f} {r.train_seconds_per_epoch:10.3f}")
    r2 = "undefined (constant)" if report.time_constant else (
        "n/a" if report.time_r2 is None else f"{report.time_r2:.4f}")
    lines.append(f"time R^2 vs {report.parameter}: {r2}")
    lines.append(f"best accuracy at {report.parameter} = {report.best_value}")
    lines.append(f"time strictly increasing: {report.time_increasing}; "
                 f"accuracy strictly increasing: {report.accuracy_increasing}")
    lines.extend(f"note: {n}" for n in report.notes)
    return "\n".join(lines)
