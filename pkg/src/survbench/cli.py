"""Command-line entry point.

Each subcommand writes its outputs to files and prints one ``key=value``
summary line on stdout. Exit codes: 0 ok, 1 usage, 2 data or validation
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .cox_linear import ConvergenceError
from .cox_objective import NoEventsError
from .dataset import DataError, SynthSpec, generate_synthetic, load_csv, write_csv
from .metrics import UndefinedMetricError
from .preprocess import PreprocessConfig, apply_preprocessor, fit_preprocessor

log = logging.getLogger("survbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _summary(**kv) -> None:
    parts = []
    for k, v in kv.items():
        if isinstance(v, float):
            v = repr(v)
        parts.append(f"{k}={v}")
    print(" ".join(parts))


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc


def cmd_synth(args) -> int:
    spec = SynthSpec.from_dict(_read_json(args.spec))
    ds = generate_synthetic(spec)
    write_csv(ds, args.out)
    _summary(command="synth", rows=ds.n_rows, columns=ds.n_features, events=int(ds.event.sum()), out=args.out)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    train = load_csv(args.train)
    cfg = PreprocessConfig.from_dict(_read_json(args.config)) if args.config else PreprocessConfig()
    plan, report = fit_preprocessor(train, seed=args.seed, config=cfg)
    Path(args.plan).write_text(json.dumps(plan.to_dict(), indent=1, sort_keys=True) + "\n")
    target = load_csv(args.apply) if args.apply else train
    out, applied = apply_preprocessor(plan, target)
    if args.out:
        write_csv(out, args.out)
    if args.report:
        Path(args.report).write_text(
            json.dumps({"fit": report.to_dict(), "apply": applied.to_dict()}, indent=1, sort_keys=True) + "\n"
        )
    _summary(command="preprocess", kept_columns=len(plan.kept_columns), rows_out=out.n_rows,
             rows_excluded=len(applied.dropped_rows_outlier), plan=args.plan)
    return EXIT_OK


def cmd_fit(args) -> int:
    params = _read_json(args.params) if args.params else {}
    ds = load_csv(args.data)
    if args.model not in harness.MODEL_KINDS:
        raise harness.ConfigError(f"unknown model kind {args.model!r}; expected one of {', '.join(harness.MODEL_KINDS)}")
    model = harness.fit_model(args.model, params, ds, seed=args.seed)
    doc = model.to_dict()
    doc["model_kind"] = args.model
    Path(args.out).write_text(json.dumps(doc, sort_keys=True) + "\n")
    _summary(command="fit", model=args.model, rows=ds.n_rows, out=args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    doc = _read_json(args.model)
    ds = load_csv(args.data)
    model = harness.model_from_dict(doc)
    risk = harness.predict_model(model, ds)
    train = load_csv(args.train) if args.train else ds
    report = harness.evaluate(train.time, train.event, ds, risk, args.fractions, args.tau)
    flat = report.flat()
    flat.pop("harrell_c_train")
    flat.pop("delta_c")
    _summary(command="evaluate", **flat)
    return EXIT_OK


def _config(args):
    cfg = harness.load_config(args.config)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def cmd_cv(args) -> int:
    cfg = _config(args)
    report = harness.run_nested_cv(cfg, threads=args.threads)
    harness.write_reports([report], cfg.output_dir, cfg.cost, timing_path=args.timing)
    invalid = sum(not f.valid for f in report.folds)
    _summary(command="cv", fits=report.fit_count, fold_results=len(report.folds), invalid=invalid, out=cfg.output_dir)
    return EXIT_OK


def cmd_scale(args) -> int:
    cfg = _config(args)
    reports = harness.scaling_experiment(cfg, args.sizes, threads=args.threads)
    harness.write_reports(reports, cfg.output_dir, cfg.cost, timing_path=True)
    _summary(command="scale", sizes=",".join(str(s) for s in args.sizes),
             fits=sum(r.fit_count for r in reports), out=cfg.output_dir)
    return EXIT_OK


def cmd_report(args) -> int:
    text = harness.report_from_dir(args.in_dir, args.format)
    print(text, file=sys.stderr if args.quiet else sys.stdout)
    _summary(command="report", format=args.format, source=args.in_dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="survbench", description="Survival model benchmark toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="fit a preprocessing plan and apply it")
    s.add_argument("--train", required=True)
    s.add_argument("--apply")
    s.add_argument("--plan", required=True)
    s.add_argument("--out")
    s.add_argument("--report")
    s.add_argument("--config", help="JSON with preprocessing thresholds and biochemical columns")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("fit", help="fit one model")
    s.add_argument("--model", required=True)
    s.add_argument("--params")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("evaluate", help="score a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--train", help="training CSV for the censoring distribution (default: --data)")
    s.add_argument("--tau", type=float)
    s.add_argument("--fractions", type=_floats, default=[0.1, 0.2])
    s.set_defaults(func=cmd_evaluate)

    for name, func in (("cv", cmd_cv), ("scale", cmd_scale)):
        s = sub.add_parser(name, help="nested cross-validation" if name == "cv" else "sample-size scaling experiment")
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--threads", type=int, default=1)
        if name == "scale":
            s.add_argument("--sizes", type=_ints, required=True)
        else:
            s.add_argument("--timing", help="also write wall-clock fit times to this CSV")
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="summarise a results directory")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--format", choices=["csv", "json"], default="json")
    s.add_argument("--quiet", action="store_true", help="send the table to stderr")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NoEventsError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, harness.ConfigError, UndefinedMetricError, ValueError, KeyError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
