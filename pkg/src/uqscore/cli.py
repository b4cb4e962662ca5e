"""Command line entry point: ``uqscore <subcommand> ...``.

Exit codes: 0 on success, 1 on usage errors, 2 on data or metric errors. Data
goes to ``--out`` or standard output; logs and errors go to standard error.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import harness, synth
from .errors import InvalidParameter, SchemaError, UqScoreError
from .metrics import kendall_tau
from .net import MlpConfig, MlpModel, TrainConfig, UqBackbone, predict_members, train
from .risk import CURVE_KINDS, calibrate_gate, risk_curve
from .rng import SEED_ENV, default_seed, derive_seed
from .scoring import SCORING_KINDS, ScoringSpec, score_arrays

log = logging.getLogger("uqscore")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _formatter(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=32)


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _open(path):
    try:
        return open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise UqScoreError(f"file not found: {path}") from None


def _dump_json(obj, fh):
    fh.write(json.dumps(obj, indent=2) + "\n")


def _hidden(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated sizes, got {text!r}") from None


def _load_split(path, split) -> synth.SampleSet:
    with _open(path) as fh:
        sets = synth.read_csv(fh)
    if split not in sets:
        raise SchemaError(f"{path} has no {split!r} rows")
    return sets[split]


def _load_spec(path) -> synth.MixtureSpec:
    with _open(path) as fh:
        try:
            return synth.MixtureSpec.from_dict(json.load(fh))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"bad mixture spec {path}: {exc}") from None


def _file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# subcommands

def cmd_generate(args):
    spec = synth.sample_spec(args.seed, args.tau, args.sigma, args.p)
    full = synth.sample_dataset(spec, args.n, args.seed, stratify=not args.no_stratify)
    train_set, test = synth.stratified_split(full, args.train_size, args.seed, ("train", "test"))
    sets = [train_set, test]
    if args.calibration:
        cal, test = synth.stratified_split(test, len(test) // 2, args.seed, ("calibration", "test"))
        sets = [train_set, cal, test]
    with _output(args.out) as fh:
        synth.write_csv(sets, fh)
    if args.spec_out:
        with _output(args.spec_out) as fh:
            _dump_json(spec.to_dict(), fh)
    log.info("wrote %d samples", args.n)


def cmd_train(args):
    data = _load_split(args.data, args.split)
    model = train(data, MlpConfig(args.hidden, args.dropout),
                  TrainConfig(args.epochs, args.batch_size, args.lr, seed=args.seed))
    with _output(args.out) as fh:
        fh.write(model.to_json() + "\n")


def _backbone(args) -> UqBackbone:
    models = []
    for path in args.model:
        with _open(path) as fh:
            try:
                models.append(MlpModel.from_json(fh.read()))
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaError(f"bad model file {path}: {exc}") from None
    seed = derive_seed(args.seed, "inference")
    if args.mc:
        if len(models) != 1:
            raise InvalidParameter("MC-Dropout takes exactly one model")
        if models[0].config.dropout_rate <= 0:
            raise InvalidParameter("MC-Dropout needs a model trained with dropout")
        return UqBackbone("mc_dropout", models, n_mc=args.mc, inference_seed=seed)
    kind = "deep_ensemble" if len(models) > 1 else "softmax"
    return UqBackbone(kind, models, inference_seed=seed)


def cmd_score(args):
    data = _load_split(args.data, args.split)
    backbone = _backbone(args)
    spec = ScoringSpec(args.scoring, args.temperature)
    spec.check_capability(backbone.n_members, True)
    logits, probs = predict_members(backbone, data.x, data.ids)
    scores = score_arrays(spec, probs, logits)
    with _output(args.out) as fh:
        fh.writelines(harness.prediction_lines(data.ids, data.y, probs, logits, scores, args.scoring))


def _scores_for(pred: harness.PredictionFile, scoring, temperature=1.0):
    if scoring is None:
        if pred.scores is None:
            raise InvalidParameter("file has no score field; pass --scoring")
        return pred.scores, pred.scoring
    spec = ScoringSpec(scoring, temperature)
    logits = pred.logit_stack()
    spec.check_capability(len(pred.records[0].members), logits is not None)
    return score_arrays(spec, pred.member_stack(), logits), scoring


def _oracle_for(pred, args):
    if not (args.spec and args.data):
        return None
    spec = _load_spec(args.spec)
    with _open(args.data) as fh:
        sets = synth.read_csv(fh)
    samples = [s for ss in sets.values() for s in ss.samples]
    by_id = {s.id: s for s in samples}
    for sid, y in zip(pred.ids, pred.labels):
        if sid in by_id and by_id[sid].y != y:
            raise SchemaError(f"label mismatch for id {sid}")
    return synth.annotate(spec, samples, pred.records)


def cmd_metrics(args):
    pred = harness.ingest_predictions(args.predictions)
    scores, name = _scores_for(pred, args.scoring, args.temperature)
    provenance = {"predictions_sha256": _file_digest(args.predictions), "scoring": name}
    report = harness.file_metrics(pred, scores, provenance).to_dict()
    oracle = _oracle_for(pred, args)
    if oracle is not None:
        report["kendall_phi"] = kendall_tau(scores, [a.phi for a in oracle])
        report["kendall_varphi"] = kendall_tau(scores, [a.varphi for a in oracle])
    with _output(args.out) as fh:
        _dump_json(report, fh)


def _curve(args):
    pred = harness.ingest_predictions(args.predictions)
    scores, _ = _scores_for(pred, args.scoring, args.temperature)
    if args.kind == "mce":
        mean = pred.mean_probs
        y_hat = (mean[:, 1] > mean[:, 0]).astype(np.int64)
        indicators = (y_hat != pred.labels).astype(np.int64)
    else:
        oracle = _oracle_for(pred, args)
        if oracle is None:
            raise InvalidParameter("--kind mbc needs --spec and --data")
        indicators = np.array([1 - a.bayes_agree for a in oracle])
    return risk_curve(scores, indicators, args.kind)


def cmd_risk_curve(args):
    curve = _curve(args)
    with _output(args.out) as fh:
        fh.write(curve.to_csv())


def cmd_calibrate(args):
    gate = calibrate_gate(_curve(args), args.gamma)
    with _output(args.out) as fh:
        _dump_json(gate.to_dict(), fh)


def cmd_experiment(args):
    if args.grid:
        with _open(args.grid) as fh:
            try:
                config = harness.GridConfig.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"bad grid config: {exc.msg}") from None
    else:
        config = harness.GridConfig.desk() if args.preset == "desk" else harness.GridConfig.full()
        config.master_seed = default_seed(0)
    if args.seed is not None:
        config.master_seed = args.seed
    log.info("running %d runs over %d cells", config.n_runs(), len(config.cells()))
    records = harness.run_grid(config, workers=args.workers)
    with _output(args.out) as fh:
        harness.write_records(records, fh)


def cmd_report(args):
    with _open(args.runs) as fh:
        records = harness.read_records(fh)
    table = harness.aggregate_table(records)
    table["negative_kendall"] = [harness.negative_kendall_summary(records, x, y)
                                 for x, y in (("kendall_phi", "uq_auc"), ("kendall_varphi", "uq_c_index"))]
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        for x in ("kendall_phi", "kendall_varphi"):
            for y in ("uq_auc", "uq_c_index"):
                path = os.path.join(args.out_dir, f"scatter_{y}_vs_{x}.csv")
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    fh.write(harness.emit_scatter(records, x, y))
        with open(os.path.join(args.out_dir, "table.json"), "w", encoding="utf-8") as fh:
            _dump_json(table, fh)
    with _output(args.out) as fh:
        _dump_json(table, fh)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uqscore", description="Rank metrics and risk control for uncertainty scores.",
                     formatter_class=_formatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=_formatter)
        p.set_defaults(func=func)
        p.add_argument("-o", "--out", default="-", help="output path ('-' for stdout)")
        return p

    def seed(p, default=None):
        p.add_argument("--seed", type=int, default=default,
                       help=f"random seed (falls back to ${SEED_ENV}, then 0)")

    def prediction_inputs(p):
        p.add_argument("--predictions", required=True, help="prediction NDJSON file")
        p.add_argument("--scoring", choices=SCORING_KINDS, default=None,
                       help="recompute scores with this scoring instead of the file's score field")
        p.add_argument("--temperature", type=float, default=1.0, help="free-energy temperature")
        p.add_argument("--spec", default=None, help="mixture spec JSON (enables oracle columns)")
        p.add_argument("--data", default=None, help="dataset CSV joined to the predictions by id")

    p = add("generate", cmd_generate, "sample the toy mixture and write a dataset CSV")
    seed(p)
    p.add_argument("--n", type=int, default=1000, help="number of samples")
    p.add_argument("--tau", type=float, default=1.0, help="std of the class-mean prior")
    p.add_argument("--sigma", type=float, default=1.0, help="within-class std")
    p.add_argument("--p", type=float, default=0.5, help="class-1 prior")
    p.add_argument("--train-size", type=int, default=600, help="train split size")
    p.add_argument("--calibration", action="store_true", help="halve the test split into calibration/test")
    p.add_argument("--no-stratify", action="store_true", help="draw labels i.i.d. instead of fixed counts")
    p.add_argument("--spec-out", default=None, help="also write the mixture spec JSON here")

    p = add("train", cmd_train, "train one MLP on a dataset split and write model JSON")
    seed(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--split", default="train", choices=synth.SPLITS, help="split to train on")
    p.add_argument("--hidden", type=_hidden, default=(64, 32), help="hidden sizes, comma separated")
    p.add_argument("--dropout", type=float, default=0.0, help="dropout rate on hidden units")
    p.add_argument("--lr", type=float, default=0.025, help="Adam learning rate")
    p.add_argument("--epochs", type=int, default=50, help="training epochs")
    p.add_argument("--batch-size", type=int, default=504, help="mini-batch size")

    p = add("score", cmd_score, "predict a split and write prediction NDJSON with scores")
    seed(p)
    p.add_argument("--model", action="append", required=True,
                   help="model JSON; repeat for a deep ensemble")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--split", default="test", choices=synth.SPLITS, help="split to predict")
    p.add_argument("--scoring", choices=SCORING_KINDS, default="entropy", help="scoring function")
    p.add_argument("--temperature", type=float, default=1.0, help="free-energy temperature")
    p.add_argument("--mc", type=int, default=0, help="MC-Dropout passes (0 disables)")

    p = add("metrics", cmd_metrics, "compute the metric report from prediction NDJSON")
    prediction_inputs(p)

    p = add("risk-curve", cmd_risk_curve, "write the sub-level-set risk curve as CSV")
    prediction_inputs(p)
    p.add_argument("--kind", choices=CURVE_KINDS, default="mce", help="error indicator")

    p = add("calibrate", cmd_calibrate, "largest threshold whose risk stays within --gamma")
    prediction_inputs(p)
    p.add_argument("--kind", choices=CURVE_KINDS, default="mce", help="error indicator")
    p.add_argument("--gamma", type=float, required=True, help="risk budget")

    p = add("experiment", cmd_experiment, "run a backbone x scoring grid and write run-record NDJSON")
    seed(p)
    p.add_argument("--grid", default=None, help="grid config JSON (overrides --preset)")
    p.add_argument("--preset", choices=("desk", "full"), default="desk", help="built-in grid")
    p.add_argument("--workers", type=int, default=1, help="worker processes")

    p = add("report", cmd_report, "aggregate run records into the correlation table and scatter CSVs")
    p.add_argument("--runs", required=True, help="run-record NDJSON")
    p.add_argument("--out-dir", default=None, help="directory for table.json and scatter CSVs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage-error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "seed") and args.seed is None and args.command != "experiment":
        args.seed = default_seed(0)
    try:
        args.func(args)
    except UqScoreError as exc:
        print(str(exc).replace("\n", " "), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io-error: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
