"""``ucl`` command line: run, ablate, curve, export-data."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..exceptions import ConfigurationError, InputError
from ..synthtasks import export_splits, generate
from .ablation import ablation_matrix, parse_axis
from .config import load_config, parse_overrides
from .report import DegenerateUncertaintyError, uncertainty_accuracy_curve
from .runner import EXIT_CONFIG, EXIT_OK, output_root, run_experiment

log = logging.getLogger("ucl")


def _add_common(p):
    p.add_argument("config", help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", help="output directory (default: under $UCL_OUTPUT_ROOT or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ucl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate one configuration")
    _add_common(p)

    p = sub.add_parser("ablate", help="run an ablation matrix over axes and seeds")
    _add_common(p)
    p.add_argument("--axes", action="append", default=[], metavar="KEY=V1,V2",
                   help="one axis per flag, e.g. curriculum.mode=none,ucl_predictive")
    p.add_argument("--seeds", default="0", help="comma list of seeds (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs (default 1)")

    p = sub.add_parser("curve", help="uncertainty-accuracy table of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--kind", choices=("predictive", "feature"), default=None,
                   help="uncertainty kind (default: the run's report.uncertainty)")
    p.add_argument("--bins", type=int, default=10)

    p = sub.add_parser("export-data", help="write the synthetic splits as record files")
    _add_common(p)
    return parser


def _fail(code, message):
    print(f"ucl: {message}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    overrides = parse_overrides(args.overrides)
    res = run_experiment(args.config, overrides, args.out)
    if res.exit_code != EXIT_OK:
        return _fail(res.exit_code, res.message)
    s = res.summary
    print(f"{res.run_dir}: {s['metric_name']} {s['test_metric']:.4f} (clean {s['test_clean_metric']:.4f})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_config(args.config, parse_overrides(args.overrides))
    axes = dict(parse_axis(a) for a in args.axes)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"--seeds must be a comma list of integers, got {args.seeds!r}", key="seeds") from None
    res = ablation_matrix(config, axes, seeds, args.jobs, args.out)
    sys.stdout.write(res.table_csv())
    failed = sum(r["n_failed"] for r in res.rows)
    if failed:
        log.warning("%d of %d runs failed", failed, len(res.runs))
    return EXIT_OK


def cmd_curve(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        summary = json.loads((run_dir / "summary.json").read_text())
        lines = (run_dir / "predictions.jsonl").read_text().splitlines()
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"{run_dir}: not a finished run ({exc.strerror})")
    recs = [json.loads(line) for line in lines if line.strip()]
    kind = args.kind or summary.get("uncertainty_kind", "predictive")
    u = [r[f"u_{kind}_norm"] for r in recs]
    if "correct" in recs[0]:
        outcome, name = [float(r["correct"]) for r in recs], "accuracy"
    else:
        outcome, name = [(r["prediction"] - r["target"]) ** 2 for r in recs], "mse"
    try:
        curve = uncertainty_accuracy_curve(outcome, u, args.bins, name)
    except DegenerateUncertaintyError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    sys.stdout.write(curve.to_csv())
    print(f"# spearman {curve.spearman!r}")
    return EXIT_OK


def cmd_export(args) -> int:
    config = load_config(args.config, parse_overrides(args.overrides))
    out = Path(args.out) if args.out else output_root() / f"data-{config.task.digest()}"
    for path in export_splits(generate(config.task), out):
        print(path)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "curve": cmd_curve, "export-data": cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        return _fail(EXIT_CONFIG, f"configuration error: {exc}")
    except InputError as exc:
        return _fail(EXIT_CONFIG, str(exc))


if __name__ == "__main__":
    sys.exit(main())
