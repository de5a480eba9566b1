"""Command-line entry point: ``sketchdecomp {simulate,detect,evaluate,run,scenario}``.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge (outputs
are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .operators import dump_stack
from .pipeline import detect, simulate
from .report import (
    dump_report,
    estimates_from_dict,
    evaluate,
    group_flows,
    metrics_dicts,
    report_dict,
    write_metrics_csv,
    write_plot_csv,
)
from .scenario import desk_scenario, severity_scenario
from .sim import GroundTruth, PacketTrace, ScheduleError, TraceFormatError, delay_histogram
from .solver import SolverError, dump_checkpoint

logger = logging.getLogger("sketchdecomp")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3


class InputError(Exception):
    pass


def _add_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides")
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--w", type=int)
    g.add_argument("--sigma", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--tol", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--max-iter", type=int, dest="max_iter")


def _config(args) -> RunConfig:
    over = {k: getattr(args, k, None) for k in ("n", "m", "d", "w", "sigma", "gamma", "tol", "seed", "max_iter")}
    return load_config(args.config, **over)


def _write(path: Path, writer, mode="w") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, mode) as fh:
        writer(fh)


# --------------------------------------------------------------------------


def do_simulate(cfg: RunConfig, out: Path, plot: bool):
    trace, gt = simulate(cfg)
    _write(out / "trace.ndjson", trace.dump_ndjson)
    _write(out / "ground_truth.json", lambda fh: json.dump(gt.to_dict(), fh))
    if plot:
        edges, counts = delay_histogram(trace, 100_000)

        def w(fh):
            fh.write("delay_ms,count\n")
            for e, c in zip(edges.tolist(), counts.tolist()):
                fh.write(f"{e / 1e6:.1f},{c}\n")

        _write(out / "delay_hist.csv", w)
    logger.info("simulated %d packets over %d flows", len(trace), len(trace.flows))
    return trace, gt


def do_detect(trace: PacketTrace, cfg: RunConfig, out: Path, checkpoint: bool):
    try:
        det = detect(trace, cfg)
    except SolverError as exc:
        if exc.state is not None:
            _write(out / "solver_failure.json", lambda fh: dump_checkpoint(exc.state, fh))
        raise
    _write(out / "series.json", det.series.dump)
    _write(out / "stack.json", lambda fh: dump_stack(det.stack, fh))
    _write(out / "residuals.csv", det.result.write_history_csv)
    rep = report_dict(det.estimates, det.horizon, cfg.report.rounded, det.result.summary())
    _write(out / "report.json", lambda fh: dump_report(rep, fh))
    if checkpoint:
        _write(out / "checkpoint.json", lambda fh: dump_checkpoint(det.result.state, fh))
    res = det.result
    logger.info(
        "solver %s after %d sweeps, max residual %.3e",
        "converged" if res.converged else "did NOT converge",
        res.iterations,
        res.residuals.max(),
    )
    return det


def do_evaluate(estimates, gt: GroundTruth, horizon: int, cfg_report, out_csv: Path, plot_csv: Path | None, per: str):
    est_flows = {e.flow for e in estimates}
    if est_flows != set(gt.flows):
        raise InputError(
            f"report and ground truth cover different flows ({len(est_flows)} vs {len(set(gt.flows))})"
        )
    if horizon > gt.n:
        raise InputError(f"report covers {horizon} windows but ground truth only {gt.n}")
    part = group_flows(gt, cfg_report.t_severe, cfg_report.t_extreme, horizon)
    try:
        metrics = evaluate(estimates, gt, part, horizon, per=per)
    except KeyError as exc:
        raise InputError(str(exc)) from None
    _write(out_csv, lambda fh: write_metrics_csv(metrics, fh))
    if plot_csv is not None:
        _write(plot_csv, lambda fh: write_plot_csv(estimates, gt, fh))
    for g in metrics_dicts(metrics):
        logger.info("%-16s actual %.2f  estimated %.2f  error %.3f  ratio %.4f",
                    g["group"], g["avg_actual"], g["avg_estimated"], g["avg_error"], g["ratio"])
    return metrics


# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    do_simulate(cfg, Path(args.out), args.emit_plot_data)
    return EXIT_OK


def _load_trace(path) -> PacketTrace:
    try:
        with open(path) as fh:
            return PacketTrace.load_ndjson(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except TraceFormatError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_detect(args) -> int:
    cfg = _config(args)
    trace = _load_trace(args.trace)
    det = do_detect(trace, cfg, Path(args.out), args.checkpoint)
    return EXIT_OK if det.result.converged else EXIT_NONCONVERGED


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def cmd_evaluate(args) -> int:
    from .config import ReportConfig

    rep = _load_json(args.report)
    gt_obj = _load_json(args.ground_truth)
    try:
        estimates = estimates_from_dict(rep)
        horizon = int(rep["windows"])
        gt = GroundTruth.from_dict(gt_obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed report or ground truth: {exc}") from None
    rcfg = load_config(args.config).report if args.config else ReportConfig()
    plot = Path(args.plot_out) if args.plot_out else None
    do_evaluate(estimates, gt, horizon, rcfg, Path(args.out), plot, args.per)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    trace, gt = do_simulate(cfg, out, args.emit_plot_data)
    det = do_detect(trace, cfg, out, args.checkpoint)
    plot = out / "loss_plot.csv" if args.emit_plot_data else None
    do_evaluate(det.estimates, gt, det.horizon, cfg.report, out / "metrics.csv", plot, args.per)
    return EXIT_OK if det.result.converged else EXIT_NONCONVERGED


def cmd_scenario(args) -> int:
    if args.kind == "severity":
        cfg = severity_scenario(n=args.n or 100, seed=args.seed if args.seed is not None else 2024)
    else:
        cfg = desk_scenario(seed=args.seed or 0, n=args.n or 30)
    _write(Path(args.out), lambda fh: json.dump(cfg, fh, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sketchdecomp", description="Flow-level packet loss detection by sketch decomposition.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic trace and its ground truth")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--emit-plot-data", action="store_true", help="also write delay_hist.csv")
    _add_overrides(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("detect", help="estimate per-flow loss from a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint", action="store_true", help="dump the final solver state")
    _add_overrides(s)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="compare a loss report against ground truth")
    s.add_argument("--report", required=True)
    s.add_argument("--ground-truth", required=True, dest="ground_truth")
    s.add_argument("--config", help="read severity thresholds from this config")
    s.add_argument("--out", required=True, help="metrics CSV path")
    s.add_argument("--plot-out", dest="plot_out", help="actual-vs-estimated CSV path")
    s.add_argument("--per", choices=("window", "flow"), default="window")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run", help="simulate, detect and evaluate in one go")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--emit-plot-data", action="store_true")
    s.add_argument("--checkpoint", action="store_true")
    s.add_argument("--per", choices=("window", "flow"), default="window")
    _add_overrides(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("scenario", help="write a ready-made config")
    s.add_argument("kind", choices=("severity", "desk"))
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError, ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        # model violations surfaced by windowing (e.g. sends past window n)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
