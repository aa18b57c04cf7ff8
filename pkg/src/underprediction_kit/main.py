"""Entry point for Underprediction Kit: `simulate`, `model` and `audit` subcommands."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections.abc import Callable, Sequence
from fractions import Fraction
from pathlib import Path
from typing import Any

from . import __version__
from .analytic_model import (
    DEFAULT_EXPONENTS,
    DEFAULT_QUALITIES,
    LeafSizeDistribution,
    PvcScenario,
    aggregate_bias,
    group_underprediction_curve,
    single_pvc_scenario,
    threshold_curve,
)
from .audit import Auditor, sweep_protocols
from .config import RunConfig, Settings, build_run_config, load_run_file
from .dataset import group_target_tables, load_csv
from .errors import UnderpredictionKitError, UsageError
from .inference import BetaPrior, simulate_generating_probabilities
from .report import (
    scenario_document,
    write_audit,
    write_curve,
    write_json,
    write_manifest,
    write_simulation,
)
from .schema import load_schema
from .tables import (
    audit_rows_table,
    census_line,
    correlation_table,
    format_table,
    group_target_text,
    scenario_tables,
    simulation_table,
)
from .tree import render_tree, train

log = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, Settings, list[str]], int]


def _float_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        message = f"expected comma-separated numbers, got {text!r}"
        raise argparse.ArgumentTypeError(message) from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


# ── Parser ──────────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="seed for every random choice (default 7)")
    common.add_argument("--output-dir", type=Path, help="where files are written (default runs)")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--config", type=Path, help="YAML run file; flags override it")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="underprediction-kit",
        description="Small-sample underprediction: simulation, analytic models, dataset audits.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate", parents=[common], help="mean generating probability per observed count"
    )
    sim.add_argument("--n", type=int, default=16, help="trials per sample")
    sim.add_argument("--iters", type=int, default=10_000, help="Monte Carlo iterations")

    model = sub.add_parser("model", help="analytic bias models")
    scenarios = model.add_subparsers(dest="scenario", required=True)

    pvc = scenarios.add_parser("pvc", parents=[common], help="single perfect-predictor PVC")
    pvc.add_argument("--n", type=int, default=100, help="sample size")
    pvc.add_argument("--r", type=float, default=0.2, help="minority share")
    pvc.add_argument("--s", type=float, default=0.2, help="target rate of both groups")
    pvc.add_argument("--s1", type=float, help="majority target rate (overrides --s)")
    pvc.add_argument("--s2", type=float, help="minority target rate (overrides --s)")
    pvc.add_argument("--prior", type=Fraction, default=Fraction(1), help="symmetric Beta a=b")

    curves = scenarios.add_parser(
        "curves", parents=[common], help="group underprediction over power-law leaves"
    )
    curves.add_argument("--sweep", choices=["exponent", "quality"], default="exponent")
    curves.add_argument("--exponents", type=_float_list, default=DEFAULT_EXPONENTS)
    curves.add_argument("--qualities", type=_float_list, default=DEFAULT_QUALITIES)
    curves.add_argument("--s", type=float, default=0.9, help="leaf quality for an exponent sweep")
    curves.add_argument("--exponent", type=float, default=2.0, help="exponent for a quality sweep")
    curves.add_argument("--r", type=float, default=0.2, help="minority share")
    curves.add_argument("--max-size", type=int, default=1000, help="largest leaf size")

    threshold = scenarios.add_parser(
        "threshold", parents=[common], help="predicted rate under the S > 0.5 threshold"
    )
    threshold.add_argument("--p", type=float, required=True, help="group target rate")
    threshold.add_argument("--exponents", type=_float_list, default=DEFAULT_EXPONENTS)
    threshold.add_argument("--max-size", type=int, default=1000, help="largest leaf size")
    threshold.add_argument("--odd-only", action="store_true", help="odd leaf sizes only")
    threshold.add_argument("--tie-rule", choices=["strict", "half"], default="strict")

    bias = scenarios.add_parser(
        "bias", parents=[common], help="minority/majority bias ratio aggregated over leaves"
    )
    bias.add_argument("--r", type=float, default=0.2, help="minority share")
    bias.add_argument("--s1", type=float, default=0.3, help="majority leaf quality")
    bias.add_argument("--s2", type=float, default=0.3, help="minority leaf quality")
    bias.add_argument("--exponents", type=_float_list, default=DEFAULT_EXPONENTS)
    bias.add_argument("--max-size", type=int, default=100, help="largest leaf size")

    audit = sub.add_parser("audit", parents=[common], help="subset audit of a dataset")
    audit.add_argument("--data", type=Path, action="append", help="CSV file (repeatable)")
    audit.add_argument("--schema", type=Path, help="schema file or bundled name (adult, compas)")
    audit.add_argument("--protocol", choices=["cv", "train-on-all", "holdout"])
    audit.add_argument("--folds", type=int)
    audit.add_argument("--holdout-fraction", type=float)
    audit.add_argument("--max-depth", type=int)
    audit.add_argument("--min-samples-split", type=int)
    audit.add_argument("--min-samples-leaf", type=int)
    audit.add_argument("--min-minority", type=int)
    audit.add_argument("--retrain-per-subset", action="store_true", default=None)
    audit.add_argument("--exclude-split-feature", action="store_true", default=None)
    audit.add_argument("--sweep", action="store_true", help="rerun under every protocol variant")
    audit.add_argument("--dump-encoded", action="store_true", help="write the encoded matrix")
    audit.add_argument("--dump-tree", action="store_true", help="write a tree trained on all rows")
    return parser


_AUDIT_FLAGS = (
    "data", "schema", "protocol", "folds", "holdout_fraction", "max_depth", "min_samples_split",
    "min_samples_leaf", "min_minority", "retrain_per_subset", "exclude_split_feature",
)


def _run_config(command: str, args: argparse.Namespace, settings: Settings) -> RunConfig:
    file_values = load_run_file(args.config) if args.config else {}
    flags: dict[str, Any] = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "threads": args.threads,
    }
    flags.update({name: getattr(args, name, None) for name in _AUDIT_FLAGS})
    return build_run_config(command, settings, file_values, flags)


# ── Commands ────────────────────────────────────────────────────────


def cmd_simulate(args: argparse.Namespace, settings: Settings, argv: list[str]) -> int:
    config = _run_config("simulate", args, settings)
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if args.iters < 1:
        raise UsageError(f"--iters must be >= 1, got {args.iters}")

    started = time.perf_counter()
    table = simulate_generating_probabilities(
        args.n, args.iters, config.seed, workers=config.threads
    )
    log.info("Simulated %d iterations in %.2fs", args.iters, time.perf_counter() - started)
    print(simulation_table(table))
    print(f"max |P - RoS| = {table.max_deviation():.4f}")

    config.ensure_output_dir()
    outputs = write_simulation(table, config.output_dir)
    write_manifest(config, argv, outputs=outputs)
    return 0


def _model_pvc(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    scenario = PvcScenario(
        total=args.n,
        minority_share=args.r,
        majority_rate=args.s if args.s1 is None else args.s1,
        minority_rate=args.s if args.s2 is None else args.s2,
        prior=BetaPrior(args.prior, args.prior),
    )
    result = single_pvc_scenario(scenario)
    print(scenario_tables(result))
    return [write_json(config.output_dir / "pvc.json", scenario_document(result))]


def _model_curves(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    shares = {"maj": 1 - args.r, "min": args.r}
    curves = {
        label: group_underprediction_curve(
            max_size=args.max_size,
            group_fraction=share,
            sweep=args.sweep,
            exponents=args.exponents,
            qualities=args.qualities,
            quality=args.s,
            exponent=args.exponent,
        )
        for label, share in shares.items()
    }
    rows = [
        (x, y_maj, y_min)
        for (x, y_maj), (_, y_min) in zip(
            curves["maj"].points, curves["min"].points, strict=True
        )
    ]
    print(format_table([args.sweep, "maj", "min"], rows, title="Group underprediction"))
    return [
        write_curve(curve, config.output_dir / f"curves-{args.sweep}-{label}.csv")
        for label, curve in curves.items()
    ]


def _model_threshold(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    curve = threshold_curve(
        args.p, args.max_size, args.exponents, odd_only=args.odd_only, tie_rule=args.tie_rule
    )
    rows = [(x, y, y - args.p) for x, y in curve.points]
    print(format_table(["exponent", "predicted", "minus p"], rows, title=f"p={args.p:g}"))
    suffix = "-odd" if args.odd_only else ""
    return [write_curve(curve, config.output_dir / f"threshold-p{args.p:g}{suffix}.csv")]


def _model_bias(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    rows = []
    for x in args.exponents:
        d = LeafSizeDistribution.power_law(x, args.max_size)
        rows.append((x, aggregate_bias(d, args.r, args.s1, args.s2)))
    print(format_table(["exponent", "min/maj bias"], rows, title="Aggregate bias ratio"))
    document = {
        "minority_share": args.r,
        "majority_quality": args.s1,
        "minority_quality": args.s2,
        "max_size": args.max_size,
        "aggregate_bias": [{"exponent": x, "ratio": b} for x, b in rows],
    }
    return [write_json(config.output_dir / "bias.json", document)]


_SCENARIOS: dict[str, Callable[[argparse.Namespace, RunConfig], list[Path]]] = {
    "pvc": _model_pvc,
    "curves": _model_curves,
    "threshold": _model_threshold,
    "bias": _model_bias,
}


def cmd_model(args: argparse.Namespace, settings: Settings, argv: list[str]) -> int:
    config = _run_config(f"model {args.scenario}", args, settings)
    config.ensure_output_dir()
    try:
        outputs = _SCENARIOS[args.scenario](args, config)
    except UnderpredictionKitError:
        raise
    except ValueError as e:
        raise UsageError(str(e)) from e
    write_manifest(config, argv, outputs=outputs)
    return 0


def cmd_audit(args: argparse.Namespace, settings: Settings, argv: list[str]) -> int:
    config = _run_config("audit", args, settings)
    if not config.data:
        raise UsageError("audit needs at least one --data file")
    if config.schema is None:
        raise UsageError("audit needs --schema")

    started = time.perf_counter()
    schema = load_schema(config.schema)
    d = load_csv(list(config.data), schema)
    out = config.ensure_output_dir()
    outputs: list[Path] = []
    if args.dump_encoded:
        outputs.append(d.dump_csv(out / f"{d.name}-encoded.csv"))
    if args.dump_tree:
        path = out / f"{d.name}-tree.txt"
        path.write_text(render_tree(train(d, config.tree)), encoding="utf-8")
        outputs.append(path)

    auditor = Auditor(
        d, config.tree, config.protocol, min_minority=config.min_minority, workers=config.threads
    )
    result = auditor.run()
    sweep = (
        sweep_protocols(
            d, config.tree, config.protocol, min_minority=config.min_minority,
            workers=config.threads,
        )
        if args.sweep
        else []
    )

    group_tables = group_target_tables(d)
    for table in group_tables:
        print(group_target_text(table))
    print(census_line(result.census))
    print(audit_rows_table(result))
    print(correlation_table([*result.correlations, *sweep]))

    outputs += write_audit(result, config, sweep, group_tables)
    write_manifest(
        config,
        argv,
        inputs=d.provenance.sources,
        schema_digest=schema.digest,
        dataset_digest=d.digest,
        outputs=outputs,
    )
    log.info("Audit of %s finished in %.1fs", d.name, time.perf_counter() - started)
    return 0


COMMANDS: dict[str, Handler] = {
    "simulate": cmd_simulate,
    "model": cmd_model,
    "audit": cmd_audit,
}


def main(argv: Sequence[str] | None = None) -> int:
    args_list = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(args_list)

    try:
        settings = Settings.from_env()
    except ValueError as e:
        logging.basicConfig(level=logging.INFO)
        logging.error("Configuration error: %s", e)
        return UsageError.exit_code

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, settings.log_level),
        format="%(asctime)s %(levelname)-8s %(name)s: %(message)s",
    )

    try:
        return COMMANDS[args.command](args, settings, args_list)
    except UnderpredictionKitError as e:
        logging.error("%s error: %s", e.kind, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
