"""Command line entry point: ``frfsurrogate <command> [options]``.

Exit status: 0 on success, 1 on usage or configuration errors, 2 when the
computation itself fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config
from .dataset import persist
from .ga import derive_seed, read_genome, write_genome, write_history
from .oracle import build_structure, dataset_at_frequency
from .pipeline import (
    TruthCache,
    ga_holdout,
    report_json,
    render_text,
    resolve_rt_scale,
    run_ga,
    run_pipeline,
    run_transfer,
    seed_benchmark,
    write_predictions,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

_TAG_TRANSFER = 3

log = logging.getLogger("frfsurrogate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default; usage errors here are status 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for forest fitting")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frfsurrogate", description="FRF surrogate: GA subset selection and frequency transfer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dataset", help="write the full FRF table at one frequency as CSV")
    _common(p)
    p.add_argument("--freq", type=float, help="frequency in Hz (default: seed_freq)")
    p.add_argument("--out", type=Path, required=True, help="output CSV path")

    p = sub.add_parser("benchmark", help="score the four regressors on the seed table")
    _common(p)
    p.add_argument("--freq", type=float, help="frequency in Hz (default: seed_freq)")
    p.add_argument("--out", type=Path, help="write rows as JSON here")

    p = sub.add_parser("ga", help="run the subset search for one tolerance")
    _common(p)
    p.add_argument("--rt", type=float, required=True, help="nominal tolerance (scaled by rt_scale)")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("transfer", help="train on a genome's rows at another frequency")
    _common(p)
    p.add_argument("--genome", type=Path, required=True, help="genome file from 'ga' or 'run'")
    p.add_argument("--freq", type=float, required=True, help="target frequency in Hz")
    p.add_argument("--trials", type=int, help="random-subset trials (default: random_trials)")
    p.add_argument("--out", type=Path, help="output directory for result JSON and predictions")

    p = sub.add_parser("run", help="full pipeline: seed stage, GA per tolerance, transfers, report")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("report", help="render a report.json as text")
    p.add_argument("path", type=Path, help="report.json")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if getattr(args, "trials", None) is not None:
        cfg = cfg.with_overrides(random_trials=args.trials)
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return cfg


def cmd_dataset(args) -> None:
    cfg = _config(args)
    freq = args.freq if args.freq is not None else cfg.seed_freq
    if not freq > 0:
        raise UsageError("--freq must be positive")
    table = dataset_at_frequency(build_structure(cfg.oracle()), freq)
    persist(table, args.out)
    print(f"{len(table)} rows at {freq:g} Hz -> {args.out}")


def cmd_benchmark(args) -> None:
    cfg = _config(args)
    freq = args.freq if args.freq is not None else cfg.seed_freq
    if not freq > 0:
        raise UsageError("--freq must be positive")
    table = dataset_at_frequency(build_structure(cfg.oracle()), freq)
    rows = seed_benchmark(cfg, table, threads=args.threads)
    print(f"{'model':<14}{'R':>10}{'RMSE-r':>12}{'time s':>10}")
    for row in rows:
        r = "undef" if row.r is None else f"{row.r:.4f}"
        print(f"{row.model:<14}{r:>10}{row.rmse_r:>12.4g}{row.wall_time_s:>10.2f}")
    if args.out:
        args.out.write_text(json.dumps([row.to_dict() for row in rows], indent=2) + "\n", encoding="utf-8")


def cmd_ga(args) -> None:
    cfg = _config(args)
    if not args.rt > 0:
        raise UsageError("--rt must be positive")
    truth = TruthCache(build_structure(cfg.oracle()))
    table = truth(cfg.seed_freq)
    scale = resolve_rt_scale(cfg, table)
    rt_eff = args.rt * scale
    best, hist = run_ga(cfg, table, ga_holdout(cfg, table), rt_eff, threads=args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    write_genome(args.out / "genome.txt", best.genome, rt_eff, cfg.seed_freq)
    write_history(args.out / "history.csv", hist)
    n = best.genome.n
    print(f"rt {args.rt:g} (effective {rt_eff:.4g}): q={best.q} reduction={n * n / best.q:.2f} r_err={best.r_err:.4g}")


def cmd_transfer(args) -> None:
    cfg = _config(args)
    if not args.freq > 0:
        raise UsageError("--freq must be positive")
    try:
        genome, meta = read_genome(args.genome)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    truth = TruthCache(build_structure(cfg.oracle()))
    if genome.n != truth.structure.n_nodes:
        raise UsageError(f"genome has N={genome.n}, structure has {truth.structure.n_nodes} nodes")
    f_s = meta["seed_freq"]
    seed = derive_seed(cfg.seed, _TAG_TRANSFER)
    self_res, _ = run_transfer(
        genome, f_s, cfg, truth=truth, seed_error=float("nan"),
        seed=derive_seed(seed, 0), threads=args.threads, with_random=False,
    )
    cfg = cfg.with_overrides(seed_freq=f_s)
    res, pred = run_transfer(
        genome, args.freq, cfg, truth=truth, seed_error=self_res.rmse_r,
        rt_effective=meta["rt"], seed=derive_seed(seed, 1), threads=args.threads,
    )
    print(
        f"f_c {res.f_c:g} Hz: q={res.q} RMSE-r={res.rmse_r:.4g} estimated={res.rmse_r_estimated:.4g} "
        f"random={res.random_mean:.4g}+-{res.random_std:.3g} gain={100 * res.gain_vs_random:.1f}%"
    )
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        doc = {**asdict(res), "gain_vs_random": res.gain_vs_random, "seed_rmse_r": self_res.rmse_r}
        (args.out / "transfer.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        write_predictions(args.out / "pred.csv", truth(args.freq), pred)


def cmd_run(args) -> None:
    cfg = _config(args)
    report = run_pipeline(cfg, args.out, threads=args.threads)
    print(render_text(json.loads(report_json(report))), end="")


def cmd_report(args) -> None:
    try:
        doc = json.loads(args.path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {args.path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.path}: not JSON ({exc})") from exc
    if doc.get("format") != "frfsurrogate-report":
        raise UsageError(f"{args.path}: not a report document")
    print(render_text(doc), end="")


COMMANDS = {
    "dataset": cmd_dataset,
    "benchmark": cmd_benchmark,
    "ga": cmd_ga,
    "transfer": cmd_transfer,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"frfsurrogate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any failure in the computation
        print(f"frfsurrogate: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
