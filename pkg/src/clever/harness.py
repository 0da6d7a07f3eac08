"""Experiment runner: score a dataset, attack it, and tabulate the results.

Reports come in two shapes: CSV (a rows table plus a separate aggregates
table) and JSON (everything, including EVT block maxima and timings).
Timings are left out of the CSV so that reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attack import AttackParams, attack
from .core import MisclassifiedInput, ScoreParams, clever_score, select_targets
from .evt import SamplePlan
from .network import Model, logits, read_model
from .transforms import apply, parse_transform

logger = logging.getLogger(__name__)

TARGET_MODES = ("runner_up", "random", "least_likely")
ORDERS = ("first", "second")
TIE_TOL = 1e-12


class DatasetError(ValueError):
    pass


@dataclass
class Record:
    id: str
    input: np.ndarray
    label: int


def load_dataset(document, num_classes: int | None = None, input_dim: int | None = None) -> list[Record]:
    """Parse ``[{id, values, label}, ...]`` (optionally wrapped as ``{"records": [...]}``)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"dataset is not valid JSON: {exc}") from None
    if isinstance(document, dict):
        document = document.get("records")
    if not isinstance(document, list):
        raise DatasetError("dataset must be a list of records or {'records': [...]}")
    out = []
    for i, rec in enumerate(document):
        try:
            values = np.array(rec["values"], dtype=np.float64)
            label = rec["label"]
            rid = str(rec.get("id", i))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"record {i}: malformed ({exc})") from None
        if values.ndim != 1 or values.size == 0:
            raise DatasetError(f"record {i}: values must be a non-empty flat list")
        if input_dim is not None and values.shape[0] != input_dim:
            raise DatasetError(f"record {i}: {values.shape[0]} values, model expects {input_dim}")
        if not np.all(np.isfinite(values)):
            raise DatasetError(f"record {i}: non-finite value")
        if isinstance(label, bool) or not isinstance(label, int):
            raise DatasetError(f"record {i}: label must be an integer")
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise DatasetError(f"record {i}: label {label} outside [0, {num_classes})")
        out.append(Record(rid, values, label))
    return out


def read_dataset(path, model: Model | None = None) -> list[Record]:
    with open(path) as fh:
        text = fh.read()
    if model is None:
        return load_dataset(text)
    return load_dataset(text, model.num_classes, model.input_dim)


@dataclass
class ExperimentConfig:
    model_path: str
    data_path: str
    transform: str = "identity"
    targets: tuple[str, ...] = TARGET_MODES
    orders: tuple[str, ...] = ORDERS
    n_batches: int = 100
    n_samples: int = 200
    radius: float = 2.0
    seed: int = 0
    run_attack: bool = False
    attack_params: AttackParams = field(default_factory=AttackParams)
    max_inputs: int | None = None
    power_iters: int = 100
    power_tol: float = 1e-5
    bpda_mode: str = "center"
    workers: int = 1

    def __post_init__(self):
        if not self.model_path or not self.data_path:
            raise ValueError("model and data paths must be non-empty")
        self.targets = tuple(self.targets)
        self.orders = tuple(self.orders)
        if not self.targets or any(t not in TARGET_MODES for t in self.targets):
            raise ValueError(f"targets must be a non-empty subset of {TARGET_MODES}")
        if not self.orders or any(o not in ORDERS for o in self.orders):
            raise ValueError(f"orders must be a non-empty subset of {ORDERS}")
        parse_transform(self.transform)
        SamplePlan(self.n_batches, self.n_samples, self.radius)

    def score_params(self, order: str, seed) -> ScoreParams:
        plan = SamplePlan(self.n_batches, self.n_samples, self.radius, seed=seed)
        return ScoreParams(
            order=order, plan=plan, power_iters=self.power_iters, power_tol=self.power_tol,
            bpda_mode=self.bpda_mode, workers=self.workers,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        d["orders"] = list(self.orders)
        return d


@dataclass
class Row:
    input_id: str
    true_class: int
    target_class: int
    target_mode: str
    order: str
    gamma: float | None = None
    L: float | None = None
    a: float | None = None
    b: float | None = None
    score: float | None = None
    evt_location: float | None = None
    evt_scale: float | None = None
    evt_shape: float | None = None
    evt_log_likelihood: float | None = None
    evt_degenerate: bool | None = None
    evt_converged: bool | None = None
    attack_distortion: float | None = None
    attack_success: bool | None = None
    error: str = ""
    # JSON-only fields
    wall_time: float = 0.0
    batch_maxima: list = field(default_factory=list)


CSV_COLUMNS = [f.name for f in fields(Row) if f.name not in ("wall_time", "batch_maxima")]
AGG_COLUMNS = [
    "target_mode", "order", "count", "avg_score", "attack_successes", "avg_attack_distortion",
    "paired", "pct_larger", "ties", "avg_pct_increase",
]


def _mean(values) -> float | None:
    values = list(values)
    return math.fsum(values) / len(values) if values else None


def compute_aggregates(rows: list[Row]) -> list[dict]:
    """Per (target mode, order) averages plus the first-vs-second comparison.

    ``pct_larger`` is the share of paired inputs where this order's score is
    strictly larger (ties within 1e-12 count for neither); ``avg_pct_increase``
    averages (winner - loser) / loser * 100 over the inputs this order wins.
    """
    ok = [r for r in rows if not r.error and r.score is not None]
    modes = [m for m in TARGET_MODES if any(r.target_mode == m for r in ok)]
    out = []
    for mode in modes:
        by_order = {
            o: {r.input_id: r for r in ok if r.target_mode == mode and r.order == o} for o in ORDERS
        }
        paired = [i for i in by_order["first"] if i in by_order["second"]]
        wins = {"first": [], "second": []}
        ties = 0
        for i in paired:
            s1, s2 = by_order["first"][i].score, by_order["second"][i].score
            if abs(s1 - s2) <= TIE_TOL:
                ties += 1
            elif s1 > s2:
                wins["first"].append((s1 - s2) / s2 * 100.0 if s2 > 0 else math.inf)
            else:
                wins["second"].append((s2 - s1) / s1 * 100.0 if s1 > 0 else math.inf)
        for order in ORDERS:
            group = list(by_order[order].values())
            if not group:
                continue
            hits = [r.attack_distortion for r in group if r.attack_success]
            out.append({
                "target_mode": mode,
                "order": order,
                "count": len(group),
                "avg_score": _mean(r.score for r in group),
                "attack_successes": len(hits),
                "avg_attack_distortion": _mean(hits),
                "paired": len(paired),
                "pct_larger": 100.0 * len(wins[order]) / len(paired) if paired else None,
                "ties": ties if paired else None,
                "avg_pct_increase": _mean(wins[order]),
            })
    return out


@dataclass
class CleverReport:
    rows: list[Row] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)
    evaluated: int = 0
    skipped: int = 0
    config: dict = field(default_factory=dict)

    def refresh(self) -> "CleverReport":
        self.aggregates = compute_aggregates(self.rows)
        return self

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "evaluated": self.evaluated,
            "skipped": self.skipped,
            "rows": [asdict(r) for r in self.rows],
            "aggregates": self.aggregates,
        }


def load_report(document) -> CleverReport:
    """Parse a JSON report, checking its stored aggregates against its rows."""
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    rows = [Row(**r) for r in doc["rows"]]
    report = CleverReport(rows, doc["aggregates"], doc["evaluated"], doc["skipped"], doc.get("config", {}))
    if compute_aggregates(rows) != report.aggregates:
        raise ValueError("report aggregates do not match its rows")
    return report


def _rng(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _plan_seed(seed, index, mode) -> tuple[int, ...]:
    return (seed, index, TARGET_MODES.index(mode))


def run_experiment(config: ExperimentConfig, model: Model | None = None, data: list[Record] | None = None) -> CleverReport:
    model = model or read_model(config.model_path)
    data = data if data is not None else read_dataset(config.data_path, model)
    if config.max_inputs is not None:
        data = data[: config.max_inputs]
    lo, hi = model.input_range
    spec = parse_transform(config.transform, lo, hi)
    rows: list[Row] = []
    evaluated = skipped = 0
    for index, rec in enumerate(data):
        pred = int(np.argmax(logits(model, apply(spec, rec.input))))
        if pred != rec.label:
            skipped += 1
            continue
        evaluated += 1
        targets = select_targets(model, spec, rec.input, _rng(config.seed, index, 0))
        for mode in config.targets:
            t = targets[mode]
            adv = None
            if config.run_attack:
                adv = attack(model, spec, rec.input, t, config.attack_params)
            for order in config.orders:
                row = Row(rec.id, rec.label, t, mode, order)
                if adv is not None:
                    row.attack_success = adv.success
                    row.attack_distortion = adv.distortion if adv.success else None
                params = config.score_params(order, _plan_seed(config.seed, index, mode))
                try:
                    res = clever_score(model, spec, rec.input, t, params, true_class=rec.label)
                except (MisclassifiedInput, ValueError, ArithmeticError) as exc:
                    row.error = f"{type(exc).__name__}: {exc}"
                    logger.warning("input %s target %s order %s: %s", rec.id, mode, order, row.error)
                else:
                    row.gamma, row.L, row.a, row.b, row.score = res.gamma, res.L, res.a, res.b, res.score
                    fit = res.fit
                    row.evt_location, row.evt_scale, row.evt_shape = fit.location, fit.scale, fit.shape
                    row.evt_log_likelihood = fit.log_likelihood
                    row.evt_degenerate, row.evt_converged = fit.degenerate, fit.converged
                    row.batch_maxima = list(fit.batch_maxima)
                    row.wall_time = res.wall_time
                rows.append(row)
    report = CleverReport(rows, evaluated=evaluated, skipped=skipped, config=config.to_dict())
    return report.refresh()


# -- emission ---------------------------------------------------------------


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _table(columns, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_cell(rec[c]) for c in columns])
    return buf.getvalue()


def emit_report(report: CleverReport, fmt: str = "csv") -> str:
    """Rows as CSV, or the full report as JSON."""
    if fmt == "csv":
        return _table(CSV_COLUMNS, [asdict(r) for r in report.rows])
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=1, allow_nan=True) + "\n"
    raise ValueError(f"unknown format {fmt!r}; expected csv or json")


def emit_aggregates(report: CleverReport) -> str:
    return _table(AGG_COLUMNS, report.aggregates)


def _parse(text: str):
    if text == "":
        return None
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


_STR_COLUMNS = {"input_id", "target_mode", "order", "error"}


def rows_from_csv(text: str) -> list[Row]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        vals = {k: (v if k in _STR_COLUMNS else _parse(v)) for k, v in rec.items()}
        for k in ("gamma", "L", "a", "b", "score", "evt_location", "evt_scale", "evt_shape",
                  "evt_log_likelihood", "attack_distortion"):
            if isinstance(vals[k], int):
                vals[k] = float(vals[k])
        out.append(Row(**vals))
    return out


def aggregates_from_csv(text: str) -> list[dict]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        d = {k: (v if k in ("target_mode", "order") else _parse(v)) for k, v in rec.items()}
        for k in ("avg_score", "avg_attack_distortion", "pct_larger", "avg_pct_increase"):
            if isinstance(d[k], int):
                d[k] = float(d[k])
        out.append(d)
    return out


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def aggregates_path(path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.aggregates.csv")


def write_report(report: CleverReport, path, fmt: str = "csv") -> list[Path]:
    """Write atomically; CSV output also writes ``<stem>.aggregates.csv``."""
    path = Path(path)
    _atomic_write(path, emit_report(report, fmt))
    written = [path]
    if fmt == "csv":
        agg = aggregates_path(path)
        _atomic_write(agg, emit_aggregates(report))
        written.append(agg)
    return written


# -- transform comparison ---------------------------------------------------


@dataclass
class TransformComparison:
    transforms: list[str]
    rows: list[dict]
    inputs: int = 0
    skipped: int = 0

    def to_csv(self) -> str:
        cols = ["target_mode", "count"]
        for name in self.transforms:
            cols += [f"avg_score[{name}]", f"ratio[{name}]"]
        return _table(cols, self.rows)


def compare_transforms(config: ExperimentConfig, specs: list, model: Model | None = None,
                       data: list[Record] | None = None) -> TransformComparison:
    """Average first-order score under each transform, relative to the first.

    Only inputs that every transform classifies correctly are used; targets
    are chosen once on the baseline and every transform is scored with the
    same ball samples.
    """
    if len(specs) < 2:
        raise ValueError("need a baseline and at least one other transform")
    model = model or read_model(config.model_path)
    data = data if data is not None else read_dataset(config.data_path, model)
    if config.max_inputs is not None:
        data = data[: config.max_inputs]
    lo, hi = model.input_range
    specs = [parse_transform(s, lo, hi) if isinstance(s, str) else s.with_range(lo, hi) for s in specs]
    names = [str(s) for s in specs]
    scores = {m: [[] for _ in specs] for m in config.targets}
    used = skipped = 0
    for index, rec in enumerate(data):
        preds = [int(np.argmax(logits(model, apply(s, rec.input)))) for s in specs]
        if any(p != rec.label for p in preds):
            skipped += 1
            continue
        used += 1
        targets = select_targets(model, specs[0], rec.input, _rng(config.seed, index, 0))
        for mode in config.targets:
            params = config.score_params("first", _plan_seed(config.seed, index, mode))
            for k, s in enumerate(specs):
                res = clever_score(model, s, rec.input, targets[mode], params, true_class=rec.label)
                scores[mode][k].append(res.score)
    rows = []
    for mode in config.targets:
        row = {"target_mode": mode, "count": used}
        base = _mean(scores[mode][0])
        for k, name in enumerate(names):
            avg = _mean(scores[mode][k])
            row[f"avg_score[{name}]"] = avg
            row[f"ratio[{name}]"] = avg / base if avg is not None and base else None
        rows.append(row)
    return TransformComparison(names, rows, used, skipped)
