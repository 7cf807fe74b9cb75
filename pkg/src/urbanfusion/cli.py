"""Command-line entry point: ``urbanfusion <subcommand> ...``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 data error, 4 training failure.
"""

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .experiment import (
    DATA_ERRORS,
    ConfigError,
    ExperimentConfig,
    StageError,
    compare,
    report_table,
    run,
)
from .models.training import TrainingError

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3, 4

logger = logging.getLogger("urbanfusion")


def _set_dotted(raw: dict, key: str, value) -> None:
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p!r} is not a mapping")
    node[parts[-1]] = value


def load_config(args) -> ExperimentConfig:
    path = Path(args.config)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for flag in ("model", "variant", "seed", "output"):
        value = getattr(args, flag, None)
        if value is not None:
            raw[flag] = value
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_dotted(raw, key.strip(), yaml.safe_load(value))
    cfg = ExperimentConfig.from_dict(raw, path.parent)
    cfg.source = path
    return cfg


def _pipeline(args, stop_after=None, resume=False) -> int:
    cfg = load_config(args)
    if resume and cfg.model in ("stgcn", "stzinb") and not (cfg.output / "checkpoint.pt").exists():
        raise ConfigError(f"no checkpoint in {cfg.output}; run `train` first")
    result = run(cfg, stop_after=stop_after, resume=resume)
    print(f"{cfg.label}: artifacts in {result.output}")
    if stop_after is None:
        r = result.report
        for name in ("mae_tract", "mae_downtown", "kl_div", "mpiw", "picp", "true_zero_rate", "f1"):
            v = getattr(r, name)
            print(f"  {name:15s} {'-' if v is None else f'{v:.4f}'}")
    return EXIT_OK


def cmd_build_graph(args):
    return _pipeline(args, stop_after="build-graph")


def cmd_prepare(args):
    return _pipeline(args, stop_after="prepare")


def cmd_train(args):
    return _pipeline(args, stop_after="train")


def cmd_evaluate(args):
    return _pipeline(args, resume=True)


def cmd_run(args):
    return _pipeline(args)


def cmd_compare(args):
    summary = compare(args.run_a, args.run_b, args.out)
    print(f"tracts: {summary['tracts']}  improved: {100 * summary['improved_fraction']:.1f}%  "
          f"(excluding {len(summary['low_activity'])} low-activity tracts: "
          f"{100 * summary['improved_fraction_active']:.1f}%)")
    return EXIT_OK


def cmd_report(args):
    table = report_table(args.runs)
    if args.out:
        table.to_csv(args.out, index=False)
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_synth(args):
    from .synthetic import gen_city, gen_counts, write_fixture

    city = gen_city(args.N, args.seed)
    cube, weather, _ = gen_counts(city, args.T, args.process, seed=args.seed, interval=args.interval)
    path = write_fixture(args.out, city, cube, weather, as_events=args.events, seed=args.seed)
    print(f"wrote synthetic dataset and config to {path}")
    return EXIT_OK


def _add_config_flags(p):
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--model", choices=("ha", "rf", "stgcn", "stzinb"))
    p.add_argument("--variant", choices=("3d", "3d2d", "3d2d1d"))
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="run directory (overrides config 'output')")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key, e.g. --set stgcn.max_epochs=20 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbanfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (
        ("build-graph", cmd_build_graph, "build and export A_d and A'"),
        ("prepare", cmd_prepare, "build the graph and export the aligned cube, weather and split"),
        ("train", cmd_train, "train the configured model and write a checkpoint"),
        ("evaluate", cmd_evaluate, "evaluate a trained run and export metrics and predictions"),
        ("run", cmd_run, "all stages end to end"),
    ):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("compare", help="per-tract MAPE difference B - A")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out", help="directory for delta_mape.csv/.geojson and compare.json")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("report", help="eight-column comparison table from evaluated runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", help="CSV path for the table")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("synth", help="write a synthetic dataset plus config")
    p.add_argument("--out", required=True)
    p.add_argument("--N", type=int, default=25)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--process", default="weather_zinb",
                   choices=("constant", "zinb", "diffusion", "clustered", "weather_zinb"))
    p.add_argument("--interval", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--events", action="store_true", help="write raw event rows instead of a count cube")
    p.set_defaults(func=cmd_synth)
    return parser


def exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return EXIT_CONFIG
    if isinstance(cause, DATA_ERRORS):
        return EXIT_DATA
    if isinstance(cause, (TrainingError, FloatingPointError)) or (isinstance(exc, StageError) and exc.stage == "train"):
        return EXIT_TRAINING
    return EXIT_FAILURE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (StageError, ConfigError, TrainingError, FloatingPointError, ValueError, OSError) + DATA_ERRORS as exc:
        code = exit_code(exc)
        msg = str(exc)
        if isinstance(exc, StageError):
            msg += f" (completed stages: {', '.join(exc.completed) or 'none'})"
        print(f"error: {msg}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
