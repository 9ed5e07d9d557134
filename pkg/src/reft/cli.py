"""``reft-sim`` command line: run, prune-report, compare, validate-config.

Exit codes: 0 ok, 1 configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, ExperimentConfig, parse_config
from .federated import RunReport, run_strategy
from .nn.zoo import MODEL_IDS
from .reporting import (
    COMPARE_COLUMNS,
    PRUNE_COLUMNS,
    compare_rows,
    prune_report,
    rows_to_csv,
    write_run,
)

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2
DEFAULT_RATIOS = (0.0, 0.3, 0.6, 0.9)

log = logging.getLogger("reft")


def _ratios(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or any(not 0 <= v < 1 for v in vals):
        raise argparse.ArgumentTypeError("ratios must lie in [0, 1)")
    return vals


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from None
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError("shape extents must be positive")
    return dims


def _threads(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reft-sim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="execute one experiment config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help="output directory (default: output_dir from the config)")
    run.add_argument("--seed", type=int, help="override the run seed")
    run.add_argument("--threads", type=_threads, default=1)

    pr = sub.add_parser("prune-report", help="params/FLOPs/size of a zoo model across pruning ratios")
    pr.add_argument("--model", choices=MODEL_IDS, default="vgg16")
    pr.add_argument("--ratios", type=_ratios, default=list(DEFAULT_RATIOS))
    pr.add_argument("--input-shape", type=_shape, default=(3, 32, 32))
    pr.add_argument("--classes", type=int, default=10)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--config", type=Path, help="take model, input shape and classes from a config")
    pr.add_argument("--out", type=Path, help="write prune_report.csv here instead of stdout")

    cmp_ = sub.add_parser("compare", help="run several configs and emit one combined CSV")
    cmp_.add_argument("--config", required=True, type=Path, action="append", dest="configs")
    cmp_.add_argument("--out", required=True, type=Path)
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--threads", type=_threads, default=1)

    val = sub.add_parser("validate-config", help="check a config and print it with defaults resolved")
    val.add_argument("--config", required=True, type=Path)
    val.add_argument("--seed", type=int)
    return parser


def _load(path: Path, seed: int | None) -> ExperimentConfig:
    return parse_config(path, {"seed": seed} if seed is not None else None)


def _partial(exc: Exception) -> RunReport:
    report = getattr(exc, "report", None)
    if not isinstance(report, RunReport):
        raise exc
    return report


def _run_one(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    try:
        report = run_strategy(cfg, threads=threads)
    except Exception as exc:
        partial = _partial(exc)
        write_run(partial, out, cfg.dumps())
        print(f"run aborted: {partial.error}", file=sys.stderr)
        return EXIT_ABORT
    write_run(report, out, cfg.dumps())
    acc = report.central.get("test_acc", float("nan"))
    print(f"{report.strategy}: central test_acc={acc:.4f} total_bytes={report.ledger.total()} -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args.config, args.seed)
    return _run_one(cfg, args.out or Path(cfg.output_dir), args.threads)


def cmd_prune_report(args) -> int:
    model, shape, classes = args.model, args.input_shape, args.classes
    if args.config is not None:
        cfg = parse_config(args.config)
        model, shape, classes = cfg.model, cfg.dataset.input_shape, cfg.dataset.classes
    text = rows_to_csv(prune_report(model, args.ratios, shape, classes, args.seed), PRUNE_COLUMNS)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "prune_report.csv").write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfgs = [_load(p, args.seed) for p in args.configs]
    seeds = {c.dataset_seed for c in cfgs}
    if len(seeds) != 1:
        raise ConfigError([f"compared configs must share one dataset seed, got {sorted(seeds)}"])
    reports, status = [], EXIT_OK
    for i, cfg in enumerate(cfgs):
        sub = args.out / f"{i:02d}-{cfg.strategy}"
        try:
            rep = run_strategy(cfg, threads=args.threads)
        except Exception as exc:
            rep, status = _partial(exc), EXIT_ABORT
            print(f"{cfg.strategy} aborted: {rep.error}", file=sys.stderr)
        write_run(rep, sub, cfg.dumps())
        reports.append(rep)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "compare.csv").write_text(rows_to_csv(compare_rows(reports), COMPARE_COLUMNS), encoding="utf-8")
    return status


def cmd_validate(args) -> int:
    sys.stdout.write(_load(args.config, args.seed).dumps())
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "prune-report": cmd_prune_report,
    "compare": cmd_compare,
    "validate-config": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
