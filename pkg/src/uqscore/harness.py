"""Experiment grid over backbones and scorings on the toy mixture.

One dataset is drawn per master seed and shared by every grid cell. A cell is
one trained backbone (softmax network, deep ensemble or MC-Dropout network);
each scoring applied to it produces one run record. Cell seeds are derived
from ``(master_seed, cell_id)`` so results do not depend on worker count or
scheduling.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .core import PredictionRecord, ProbVector
from .errors import InvalidParameter, MetricUndefined, SchemaError, UqScoreError
from .metrics import (MetricReport, g_auc_from_lemma, kendall_tau, metric_report,
                      pearson_fisher)
from .net import MlpConfig, TrainConfig, UqBackbone, predict_members, train
from .rng import derive_seed
from .scoring import ScoringSpec, score_arrays
from .synth import MixtureSpec, SampleSet, annotate_arrays, default_splits, sample_dataset, sample_spec

log = logging.getLogger(__name__)

SOFTMAX_SCORINGS = ("entropy", "free_energy", "variance")
ENSEMBLE_SCORINGS = ("total_entropy", "aleatoric_entropy", "free_energy", "mutual_information", "variance")


@dataclass
class GridConfig:
    master_seed: int = 0
    n: int = 1000
    tau: float = 1.0
    sigma: float = 1.0
    p: float = 0.5
    train_size: int = 600
    epochs: int = 50
    batch_size: int = 504
    learning_rates: tuple = (0.005, 0.025, 0.05)
    hidden_layouts: tuple = ((64, 32), (32, 32), (32, 16), (64,))
    ensemble_sizes: tuple = (5, 10)
    mc_samples: tuple = (10, 50, 100)
    dropout_rates: tuple = (0.1, 0.3, 0.5)
    backbones: tuple = ("softmax", "deep_ensemble", "mc_dropout")
    softmax_scorings: tuple = SOFTMAX_SCORINGS
    ensemble_scorings: tuple = ENSEMBLE_SCORINGS

    def __post_init__(self):
        self.learning_rates = tuple(float(v) for v in self.learning_rates)
        self.hidden_layouts = tuple(tuple(int(h) for h in lay) for lay in self.hidden_layouts)
        self.ensemble_sizes = tuple(int(v) for v in self.ensemble_sizes)
        self.mc_samples = tuple(int(v) for v in self.mc_samples)
        self.dropout_rates = tuple(float(v) for v in self.dropout_rates)
        self.backbones = tuple(self.backbones)
        self.softmax_scorings = tuple(self.softmax_scorings)
        self.ensemble_scorings = tuple(self.ensemble_scorings)
        if not 0 < self.train_size < self.n:
            raise InvalidParameter(f"train_size must lie in (0, n), got {self.train_size}")
        for kind in self.backbones:
            if kind not in ("softmax", "deep_ensemble", "mc_dropout"):
                raise InvalidParameter(f"unknown backbone kind {kind!r}")
        if any(k < 2 for k in self.ensemble_sizes):
            raise InvalidParameter("ensemble sizes must be at least 2")
        if any(not 0 < r < 1 for r in self.dropout_rates):
            raise InvalidParameter("MC-Dropout rates must lie in (0, 1)")
        for name in self.softmax_scorings:
            ScoringSpec(name).check_capability(1, True)
        for name in self.ensemble_scorings:
            ScoringSpec(name).check_capability(2, True)

    @classmethod
    def full(cls, master_seed: int = 0) -> "GridConfig":
        return cls(master_seed=master_seed)

    @classmethod
    def desk(cls, master_seed: int = 0) -> "GridConfig":
        """Reduced grid for quick runs: 6 softmax + 10 ensemble + 20 MC-Dropout runs."""
        return cls(master_seed=master_seed, learning_rates=(0.025,), hidden_layouts=((64, 32), (64,)),
                   ensemble_sizes=(5,), mc_samples=(50,), dropout_rates=(0.1, 0.5))

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise SchemaError(f"unknown grid config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def cells(self) -> list["Cell"]:
        out = []
        for lr in self.learning_rates:
            for lay in self.hidden_layouts:
                if "softmax" in self.backbones:
                    out.append(Cell("softmax", lr, lay))
        for lr in self.learning_rates:
            for lay in self.hidden_layouts:
                if "deep_ensemble" in self.backbones:
                    out.extend(Cell("deep_ensemble", lr, lay, n_ens=k) for k in self.ensemble_sizes)
        for lr in self.learning_rates:
            for lay in self.hidden_layouts:
                if "mc_dropout" in self.backbones:
                    out.extend(Cell("mc_dropout", lr, lay, n_mc=k, dropout_rate=r)
                               for k in self.mc_samples for r in self.dropout_rates)
        return out

    def scorings_for(self, kind: str) -> tuple:
        return self.softmax_scorings if kind == "softmax" else self.ensemble_scorings

    def n_runs(self) -> int:
        return sum(len(self.scorings_for(c.kind)) for c in self.cells())


@dataclass(frozen=True)
class Cell:
    kind: str
    learning_rate: float
    hidden_sizes: tuple
    n_ens: int = 1
    n_mc: int = 0
    dropout_rate: float = 0.0

    @property
    def cell_id(self) -> str:
        parts = [self.kind, f"lr{self.learning_rate:g}", "h" + "x".join(map(str, self.hidden_sizes))]
        if self.kind == "deep_ensemble":
            parts.append(f"ens{self.n_ens}")
        if self.kind == "mc_dropout":
            parts += [f"mc{self.n_mc}", f"p{self.dropout_rate:g}"]
        return "-".join(parts)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


@dataclass
class RunRecord:
    run_id: str
    backbone: dict
    scoring: str
    metrics: dict | None
    kendall_phi: float | None
    kendall_varphi: float | None
    status: str = "ok"
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**{f.name: d.get(f.name) for f in dataclasses.fields(cls)})


def shared_data(config: GridConfig) -> tuple[MixtureSpec, dict[str, SampleSet]]:
    spec = sample_spec(config.master_seed, config.tau, config.sigma, config.p)
    return spec, default_splits(spec, config.master_seed, config.n, config.train_size)


def build_backbone(cell: Cell, train_set: SampleSet, master_seed: int, epochs: int = 50,
                   batch_size: int = 504) -> UqBackbone:
    cell_seed = derive_seed(master_seed, "cell", cell.cell_id)
    mlp = MlpConfig(cell.hidden_sizes, cell.dropout_rate)
    n_models = cell.n_ens if cell.kind == "deep_ensemble" else 1
    models = []
    for k in range(n_models):
        tcfg = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=cell.learning_rate,
                           seed=derive_seed(cell_seed, "member", k))
        models.append(train(train_set, mlp, tcfg))
    return UqBackbone(cell.kind, models, n_mc=cell.n_mc, inference_seed=derive_seed(cell_seed, "inference"),
                      label=cell.cell_id)


def cell_prediction_lines(cell: Cell, config: GridConfig, scoring: str) -> list[str]:
    """Prediction NDJSON for one cell's test split, as a run would score it."""
    _, splits = shared_data(config)
    test = splits["test"]
    with threadpool_limits(1):
        backbone = build_backbone(cell, splits["train"], config.master_seed, config.epochs, config.batch_size)
        logits, probs = predict_members(backbone, test.x, test.ids)
    scores = score_arrays(ScoringSpec(scoring), probs, logits)
    return list(prediction_lines(test.ids, test.y, probs, logits, scores, scoring))


def evaluate_scores(scores: np.ndarray, oracle, provenance: dict) -> tuple[dict, float, float]:
    report = metric_report(scores, oracle.mis, oracle.delta, provenance, ids=oracle.ids)
    return report.to_dict(), kendall_tau(scores, oracle.phi), kendall_tau(scores, oracle.varphi)


def run_cell(cell: Cell, config: GridConfig, data=None) -> list[RunRecord]:
    spec, splits = data if data is not None else shared_data(config)
    test = splits["test"]
    with threadpool_limits(1):
        try:
            backbone = build_backbone(cell, splits["train"], config.master_seed, config.epochs, config.batch_size)
            logits, probs = predict_members(backbone, test.x, test.ids)
        except UqScoreError as exc:
            return [_skipped(cell, name, str(exc)) for name in config.scorings_for(cell.kind)]
        oracle = annotate_arrays(spec, test.x, test.y, probs.mean(axis=1), test.ids)
        out = []
        for name in config.scorings_for(cell.kind):
            run_id = f"{cell.cell_id}/{name}"
            provenance = {"run_id": run_id, "master_seed": config.master_seed,
                          "config_digest": config.digest(),
                          "seed_digest": f"{derive_seed(config.master_seed, 'cell', cell.cell_id):016x}"}
            try:
                scores = score_arrays(ScoringSpec(name), probs, logits)
                metrics, k_phi, k_varphi = evaluate_scores(scores, oracle, provenance)
            except (MetricUndefined, InvalidParameter) as exc:
                out.append(_skipped(cell, name, str(exc)))
                continue
            out.append(RunRecord(run_id, cell.to_dict(), name, metrics, k_phi, k_varphi))
    return out


def _skipped(cell: Cell, scoring: str, reason: str) -> RunRecord:
    return RunRecord(f"{cell.cell_id}/{scoring}", cell.to_dict(), scoring, None, None, None,
                     status="skipped", reason=reason)


_WORKER_CACHE: dict = {}


def _worker_run(args) -> list[RunRecord]:
    cell, config_dict = args
    config = GridConfig.from_dict(config_dict)
    key = config.digest()
    if key not in _WORKER_CACHE:
        _WORKER_CACHE.clear()
        _WORKER_CACHE[key] = shared_data(config)
    return run_cell(cell, config, _WORKER_CACHE[key])


def run_grid(config: GridConfig, workers: int = 1, cells: Sequence[Cell] | None = None) -> list[RunRecord]:
    """Run every cell and return records in cell enumeration order."""
    cells = list(config.cells() if cells is None else cells)
    if workers < 1:
        raise InvalidParameter(f"workers must be >= 1, got {workers}")
    out: list[RunRecord] = []
    if workers == 1:
        data = shared_data(config)
        for i, cell in enumerate(cells):
            log.info("cell %d/%d %s", i + 1, len(cells), cell.cell_id)
            out.extend(run_cell(cell, config, data))
        return out
    payload = [(cell, config.to_dict()) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for i, recs in enumerate(pool.map(_worker_run, payload)):
            log.info("cell %d/%d %s", i + 1, len(cells), cells[i].cell_id)
            out.extend(recs)
    return out


def write_records(records: Iterable[RunRecord], fh) -> None:
    for rec in records:
        fh.write(rec.to_json() + "\n")


def read_records(fh) -> list[RunRecord]:
    out = []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            out.append(RunRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise SchemaError(str(exc), line=lineno) from None
    return out


def check_lemma_fields(records: Iterable[RunRecord], tol: float = 1e-12) -> list[str]:
    """Run ids whose stored risk-coverage lemma value disagrees with a recomputation."""
    bad = []
    for rec in records:
        if rec.ok:
            m = rec.metrics
            if abs(g_auc_from_lemma(m["uq_auc"], m["acc"]) - m["g_auc_lemma"]) > tol:
                bad.append(rec.run_id)
    return bad


TABLE_ROWS = (("uq_auc", "kendall_phi"), ("uq_auc", "kendall_varphi"),
              ("uq_c_index", "kendall_phi"), ("uq_c_index", "kendall_varphi"))


def _axis(rec: RunRecord, name: str) -> float:
    if name in ("kendall_phi", "kendall_varphi"):
        return getattr(rec, name)
    return rec.metrics[name]


def aggregate_table(records: Sequence[RunRecord], alpha: float = 0.95) -> dict:
    """Pearson correlations (Fisher-z intervals) between each metric and each
    ground-truth Kendall coefficient across ok runs."""
    ok = [r for r in records if r.ok]
    if len(ok) < 4:
        raise MetricUndefined("aggregate_table")
    table = {"n_runs": len(ok), "n_skipped": len(records) - len(ok), "rows": []}
    for metric, gt in TABLE_ROWS:
        rep = pearson_fisher([_axis(r, metric) for r in ok], [_axis(r, gt) for r in ok], alpha,
                             with_kendall=False)
        table["rows"].append({"metric": metric, "ground_truth": gt, **rep.to_dict()})
    return table


def table_entry(table: dict, metric: str, gt: str) -> dict:
    for row in table["rows"]:
        if row["metric"] == metric and row["ground_truth"] == gt:
            return row
    raise KeyError((metric, gt))


def emit_scatter(records: Sequence[RunRecord], x_axis: str = "kendall_phi", y_axis: str = "uq_auc") -> str:
    if x_axis not in ("kendall_phi", "kendall_varphi") or y_axis not in ("uq_auc", "uq_c_index"):
        raise InvalidParameter(f"unsupported axes {x_axis}/{y_axis}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run_id", "backbone", x_axis, y_axis])
    for r in records:
        if r.ok:
            writer.writerow([r.run_id, r.backbone["kind"], repr(_axis(r, x_axis)), repr(_axis(r, y_axis))])
    return buf.getvalue()


def negative_kendall_summary(records: Sequence[RunRecord], x_axis: str = "kendall_phi",
                             y_axis: str = "uq_auc") -> dict:
    """Among ok runs whose Kendall coefficient is negative, the share scoring below 0.5."""
    neg = [r for r in records if r.ok and _axis(r, x_axis) < 0]
    below = sum(1 for r in neg if _axis(r, y_axis) < 0.5)
    return {"x_axis": x_axis, "y_axis": y_axis, "n_negative": len(neg), "n_below_half": below,
            "fraction": below / len(neg) if neg else None}


# prediction files

PREDICTION_KEYS = {"id", "y_true", "probs", "logits", "score", "scoring"}
INGEST_TOL = 1e-6


@dataclass
class PredictionFile:
    records: list[PredictionRecord]
    labels: np.ndarray
    scores: np.ndarray | None = None
    scoring: str | None = None

    @property
    def ids(self) -> list[str]:
        return [r.sample_id for r in self.records]

    @property
    def mean_probs(self) -> np.ndarray:
        return np.array([r.mean_prob.as_tuple() for r in self.records])

    def member_stack(self) -> np.ndarray:
        sizes = {len(r.members) for r in self.records}
        if len(sizes) != 1:
            raise InvalidParameter("records carry different member counts")
        return np.stack([r.member_array() for r in self.records])

    def logit_stack(self) -> np.ndarray | None:
        if any(r.logits is None for r in self.records):
            return None
        return np.stack([r.logit_array() for r in self.records])


def _parse_prob_row(row, lineno) -> ProbVector:
    if not isinstance(row, list) or len(row) != 2 or not all(isinstance(v, (int, float)) for v in row):
        raise SchemaError("each probs entry must be a pair of numbers", line=lineno)
    p0, p1 = float(row[0]), float(row[1])
    if min(p0, p1) < 0 or abs(p0 + p1 - 1.0) > INGEST_TOL:
        raise SchemaError(f"probabilities {row} do not sum to 1", line=lineno)
    total = p0 + p1
    return ProbVector(p0 / total, p1 / total)


def parse_predictions(lines: Iterable[str]) -> PredictionFile:
    records, labels, scores = [], [], []
    scoring = None
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON ({exc.msg})", line=lineno) from None
        if not isinstance(obj, dict):
            raise SchemaError("expected a JSON object", line=lineno)
        extra = set(obj) - PREDICTION_KEYS
        if extra:
            raise SchemaError(f"unknown keys {sorted(extra)}", line=lineno)
        for key in ("id", "y_true", "probs"):
            if key not in obj:
                raise SchemaError(f"missing key {key!r}", line=lineno)
        sid = obj["id"]
        if not isinstance(sid, str):
            raise SchemaError("id must be a string", line=lineno)
        if sid in seen:
            raise SchemaError(f"duplicate id {sid!r}", line=lineno)
        seen.add(sid)
        if obj["y_true"] not in (0, 1) or isinstance(obj["y_true"], bool):
            raise SchemaError("y_true must be 0 or 1", line=lineno)
        probs = obj["probs"]
        if not isinstance(probs, list) or not probs:
            raise SchemaError("probs must be a non-empty list of pairs", line=lineno)
        members = tuple(_parse_prob_row(row, lineno) for row in probs)
        logits = obj.get("logits")
        if logits is not None:
            if (not isinstance(logits, list) or len(logits) != len(members)
                    or not all(isinstance(r, list) and len(r) == 2 for r in logits)):
                raise SchemaError("logits must hold one pair per probs entry", line=lineno)
            logits = tuple((float(a), float(b)) for a, b in logits)
        if "score" in obj:
            if not isinstance(obj["score"], (int, float)) or not np.isfinite(obj["score"]):
                raise SchemaError("score must be a finite number", line=lineno)
            scores.append(float(obj["score"]))
        if "scoring" in obj:
            if scoring not in (None, obj["scoring"]):
                raise SchemaError("mixed scoring names in one file", line=lineno)
            scoring = obj["scoring"]
        records.append(PredictionRecord(sid, members, logits))
        labels.append(int(obj["y_true"]))
    if scores and len(scores) != len(records):
        raise SchemaError("score present on some lines but not others")
    return PredictionFile(records, np.array(labels, dtype=np.int64),
                          np.array(scores) if scores else None, scoring)


def ingest_predictions(path) -> PredictionFile:
    with open(path, encoding="utf-8") as fh:
        return parse_predictions(fh)


def prediction_lines(ids, labels, probs, logits=None, scores=None, scoring=None) -> Iterable[str]:
    """NDJSON lines for member stacks shaped ``(n, m, 2)``."""
    probs = np.asarray(probs, float)
    for i, sid in enumerate(ids):
        obj = {"id": str(sid), "y_true": int(labels[i]), "probs": probs[i].tolist()}
        if logits is not None:
            obj["logits"] = np.asarray(logits[i], float).tolist()
        if scores is not None:
            obj["score"] = float(scores[i])
        if scoring is not None:
            obj["scoring"] = scoring
        yield json.dumps(obj, separators=(",", ":")) + "\n"


def file_metrics(pred: PredictionFile, scores=None, provenance: dict | None = None) -> MetricReport:
    """Metric report computed from predictions and labels alone."""
    scores = pred.scores if scores is None else scores
    if scores is None:
        raise InvalidParameter("no scores: pass a scoring name or include a score field")
    mean = pred.mean_probs
    y = pred.labels
    y_hat = (mean[:, 1] > mean[:, 0]).astype(np.int64)
    mis = (y != y_hat).astype(np.int64)
    delta = 1.0 - mean[np.arange(len(y)), y]
    return metric_report(np.asarray(scores, float), mis, delta, provenance, ids=pred.ids)


# oracle testbed shared by the acceptance checks

@dataclass
class Testbed:
    spec: MixtureSpec
    train: SampleSet
    test: SampleSet
    probs: np.ndarray
    oracle: object = field(repr=False)


def oracle_testbed(seed: int = 0, n_test: int = 4000, hidden=(64, 32), learning_rate: float = 0.025,
                   n: int = 1000, train_size: int = 600) -> Testbed:
    """A trained softmax network on the default toy split, evaluated on a large
    fresh test sample from the same mixture."""
    spec = sample_spec(seed)
    splits = default_splits(spec, seed, n, train_size)
    cell = Cell("softmax", learning_rate, tuple(hidden))
    with threadpool_limits(1):
        backbone = build_backbone(cell, splits["train"], seed)
        test = sample_dataset(spec, n_test, derive_seed(seed, "testbed"), stratify=True,
                              split_tag="test", id_prefix="t")
        _, probs = predict_members(backbone, test.x, test.ids)
    mean = probs.mean(axis=1)
    return Testbed(spec, splits["train"], test, mean, annotate_arrays(spec, test.x, test.y, mean, test.ids))
