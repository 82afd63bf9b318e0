"""Command-line entry point: ``decgreen {train,evaluate,export,interpolate,benchmark}``.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import ConfigError, RunConfig
from .io import (
    CheckpointError,
    atomic_write_text,
    load_checkpoint,
    save_checkpoint,
    write_field_csv,
    write_json,
)
from .pde import get_problem
from .training import (
    AdamState,
    DivergenceError,
    TrainConfig,
    evaluate,
    field_report,
    interpolate_eval,
    loss_and_grad,
    adam_step,
    setup,
    train,
)

log = logging.getLogger("decgreen")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    pass


@contextlib.contextmanager
def thread_limit(threads: int | None):
    """Cap BLAS threads; ``1`` gives the bitwise-reproducible mode."""
    if not threads:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        yield


def _load_run(args) -> RunConfig:
    run = config_mod.load(args.config)
    if getattr(args, "seed", None) is not None:
        run.train = dataclasses.replace(run.train, seed=args.seed)
    if getattr(args, "out", None):
        run.out_dir = args.out
    if getattr(args, "checkpoint", None):
        run.checkpoint = args.checkpoint
    return run


def summary_record(run: RunConfig, metrics) -> dict:
    """Deterministic end-of-run record; wall-clock lives in timing.json."""
    cfg = run.train
    return {
        "method": cfg.model.kind,
        "network_structure": cfg.model.nets,
        "P": cfg.model.P if cfg.model.uses_quadrature else None,
        "R": cfg.model.R,
        "test_loss": metrics.test_loss,
        "final_train_loss": metrics.records[-1]["total"] if metrics.records else None,
        "steps_run": metrics.steps_run,
        "stop_reason": metrics.stop_reason,
        "evals_per_step": metrics.counters_per_step,
        "test_checks": metrics.test_checks,
        "config": run.to_dict(),
    }


def cmd_train(args) -> int:
    run = _load_run(args)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []

    def on_record(rec):
        lines.append(json.dumps(rec, sort_keys=True))

    t0 = time.perf_counter()
    try:
        model, metrics = train(run.train, on_record=on_record)
    except DivergenceError as exc:
        atomic_write_text(out / "metrics.jsonl", "\n".join(lines) + "\n" if lines else "")
        log.error("%s", exc)
        return EXIT_DIVERGED
    cfg = run.train
    save_checkpoint(run.checkpoint_path, model, cfg.problem, cfg.params)
    atomic_write_text(out / "metrics.jsonl", "\n".join(lines) + "\n")
    summary = summary_record(run, metrics)
    write_json(out / "summary.json", summary)
    write_json(out / "timing.json", {"wall_clock_seconds": metrics.wall_clock, "total_seconds": time.perf_counter() - t0})
    if not args.no_plots and metrics.records:
        from .plotting import plot_loss_history

        plot_loss_history(metrics.records, out / "loss_history.png", title=f"{cfg.model.kind} on {cfg.problem}")
    print(json.dumps({k: summary[k] for k in ("method", "test_loss", "steps_run", "stop_reason")}))
    return EXIT_OK


def _checkpoint(args):
    path = Path(args.checkpoint)
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_evaluate(args) -> int:
    model, pname, trained = _checkpoint(args)
    problem = get_problem(args.problem or pname)
    values = [args.a] if args.a is not None else trained
    res = {format(a, "g"): evaluate(model, problem, a, args.resolution) for a in values}
    print(json.dumps({"problem": problem.name, "resolution": args.resolution, "test_mse": res}, sort_keys=True))
    return EXIT_OK


def _write_field_outputs(report, out: Path, stem: str, plots: bool, title: str) -> None:
    write_field_csv(out / f"{stem}.csv", report.points, report.u_exact, report.u_pred)
    if plots:
        from .plotting import plot_field_triple

        plot_field_triple(report.points, report.u_exact, report.u_pred, out / f"{stem}.png", title=title)


def cmd_export(args) -> int:
    model, pname, trained = _checkpoint(args)
    problem = get_problem(args.problem or pname)
    a = args.a if args.a is not None else trained[0]
    report = field_report(model, problem, a, args.resolution)
    out = Path(args.out or ".")
    stem = f"field_{problem.name}_a{a:g}"
    _write_field_outputs(report, out, stem, not args.no_plots, f"{model.kind}, {problem.name}, a={a:g}")
    print(json.dumps({"csv": str(out / f"{stem}.csv"), "mse": report.mse, "rel_l2": report.rel_l2}))
    return EXIT_OK


def cmd_interpolate(args) -> int:
    model, pname, trained = _checkpoint(args)
    if len(trained) < 2:
        raise UsageError(
            f"checkpoint was trained on a single source parameter {trained}; interpolation needs several"
        )
    problem = get_problem(pname)
    report = interpolate_eval(model, problem, trained, args.a, args.resolution)
    out = Path(args.out or ".")
    stem = f"interpolate_{problem.name}_a{args.a:g}"
    _write_field_outputs(report, out, stem, not args.no_plots, f"{model.kind} interpolation at a={args.a:g}")
    summary = {
        "problem": problem.name,
        "a": args.a,
        "trained_params": trained,
        "resolution": args.resolution,
        "mse": report.mse,
        "rel_l2": report.rel_l2,
        "extrapolation": report.extrapolation,
        "warning": "a lies outside the trained parameter range" if report.extrapolation else None,
    }
    write_json(out / f"{stem}.summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def kernel_evals(kind: str, counts: dict) -> int:
    if kind.startswith("decgreen"):
        return counts["H"]
    if kind.startswith("modnet"):
        return counts["G"]
    return 0


def expected_kernel_evals(cfg: TrainConfig, samples) -> int:
    kind = cfg.model.kind
    if kind.startswith("decgreen"):
        return cfg.model.P
    if kind.startswith("modnet"):
        pts = sum(len(s) for s in samples.interior) + sum(len(s) for s in samples.boundary)
        return cfg.model.P * pts
    return 0


def time_steps(cfg: TrainConfig, repetitions: int, warmup: int = 1) -> dict:
    """Median wall-clock of full training steps plus per-step counters."""
    problem, samples, model = setup(cfg)
    params = [p for net in model.net_list for p in net.params]
    state = AdamState.for_params(params)
    times = []
    counts = {}
    for i in range(warmup + repetitions):
        model.reset_counts()
        t0 = time.perf_counter()
        _, grads = loss_and_grad(model, problem, samples, cfg)
        adam_step(params, [g for gs in grads for g in gs], state, cfg.lr)
        dt = time.perf_counter() - t0
        counts = model.eval_counts()
        if i >= warmup:
            times.append(dt)
    evals = kernel_evals(cfg.model.kind, counts)
    expected = expected_kernel_evals(cfg, samples)
    return {
        "kind": cfg.model.kind,
        "P": cfg.model.P,
        "collocation_points": sum(len(s) for s in samples.interior) + sum(len(s) for s in samples.boundary),
        "median_step_seconds": statistics.median(times),
        "step_seconds": times,
        "evals_per_step": counts,
        "kernel_evals_per_step": evals,
        "expected_kernel_evals": expected,
        "counter_law_ok": evals == expected,
    }


def run_benchmark(run: RunConfig) -> dict:
    bench = run.benchmark
    if bench is None or len(bench.models) < 2:
        raise ConfigError("benchmark.models: need at least 2 model configurations")
    rows = []
    for i, mcfg in enumerate(bench.models):
        cfg = dataclasses.replace(run.train, model=mcfg, params=run.train.params[:1])
        row = time_steps(cfg, bench.repetitions, bench.warmup)
        row["label"] = f"{i}:{mcfg.kind}(P={mcfg.P})"
        rows.append(row)
    ratios = []
    for fast in (r for r in rows if r["kind"].startswith("decgreen")):
        for slow in (r for r in rows if r["kind"].startswith("modnet")):
            ratios.append(
                {
                    "factorized": fast["label"],
                    "baseline": slow["label"],
                    "time_ratio": slow["median_step_seconds"] / fast["median_step_seconds"],
                    "counter_ratio": slow["kernel_evals_per_step"] / fast["kernel_evals_per_step"],
                }
            )
    return {"repetitions": bench.repetitions, "models": rows, "ratios": ratios}


def cmd_benchmark(args) -> int:
    run = _load_run(args)
    report = run_benchmark(run)
    out = Path(run.out_dir)
    write_json(out / "benchmark.json", report)
    cols = ("label", "kind", "P", "collocation_points", "median_step_seconds", "kernel_evals_per_step", "expected_kernel_evals", "counter_law_ok")
    lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in report["models"]]
    atomic_write_text(out / "benchmark.csv", "\n".join(lines) + "\n")
    if not args.no_plots:
        from .plotting import plot_benchmark

        plot_benchmark(report["models"], out / "benchmark.png")
    for r in report["ratios"]:
        print(f"{r['baseline']} / {r['factorized']}: time x{r['time_ratio']:.2f}, evaluations x{r['counter_ratio']:.1f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decgreen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False, checkpoint=False):
        if config:
            p.add_argument("--config", required=True, help="run configuration (JSON)")
            p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--checkpoint", required=checkpoint, help="checkpoint path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=None, help="BLAS threads (1 = reproducible)")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    p = sub.add_parser("train", help="train a model from a config file")
    common(p, config=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test MSE of a checkpoint on the analytic solution")
    common(p, checkpoint=True)
    p.add_argument("--problem")
    p.add_argument("--a", type=float)
    p.add_argument("--resolution", type=int, default=101)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="write exact/predicted/error fields as CSV")
    common(p, checkpoint=True)
    p.add_argument("--problem")
    p.add_argument("--a", type=float)
    p.add_argument("--resolution", type=int, default=101)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("interpolate", help="evaluate an operator-trained model at a new source parameter")
    common(p, checkpoint=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--resolution", type=int, default=101)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("benchmark", help="per-step cost of several models on one problem")
    common(p, config=True)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "resolution", 2) < 2:
        print("error: --resolution must be >= 2", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with thread_limit(args.threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
