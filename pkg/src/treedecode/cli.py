"""Command line entry points: run, sweep, selftest."""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .config import (
    ConfigError,
    apply_seed_override,
    build_backend,
    build_engine_config,
    build_latency,
    build_prompts,
    load_config,
)
from .engine import DecodeEngine, EngineConfig, RunResult
from .selftest import run_all


def _write_outputs(
    out_dir: Path, cfg: dict[str, Any], engine: DecodeEngine, result: RunResult, verbose: bool
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    output = cfg["output"]
    if output["transcripts"]:
        for i, (prompt, generated) in enumerate(zip(result.prompts, result.transcripts)):
            path = out_dir / f"transcript_{i:03d}.txt"
            path.write_text(
                " ".join(str(t) for t in prompt) + "\n"
                + " ".join(str(t) for t in generated) + "\n"
            )
    if output["metrics"]:
        with (out_dir / "metrics.jsonl").open("w") as fh:
            for m in result.metrics:
                fh.write(json.dumps(m.to_json()) + "\n")
    if output["summary"]:
        s = result.summary
        with (out_dir / "summary.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "mode", "iterations", "total_tokens", "total_time",
                "tokens_per_sec", "mean_accepted", "mean_prune_rate", "mean_tree_size",
            ])
            writer.writerow([
                s.mode, s.iterations, s.total_tokens, f"{s.total_time:.6f}",
                f"{s.tokens_per_sec:.6f}", f"{s.mean_accepted:.6f}",
                f"{s.mean_prune_rate:.6f}", f"{s.mean_tree_size:.6f}",
            ])
    if verbose:
        (out_dir / "acceptance_stats.csv").write_text(engine.stats.snapshot_csv())
        with (out_dir / "cost_diagnostics.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["size", "t_perf", "staleness", "weight"])
            for row in engine.cost.diagnostics(now=result.summary.iterations):
                t_perf = "" if row["t_perf"] is None else f"{row['t_perf']:.6f}"
                staleness = "" if row["staleness"] is None else row["staleness"]
                writer.writerow([row["size"], t_perf, staleness, f"{row['weight']:.6f}"])
        with (out_dir / "plan_events.jsonl").open("w") as fh:
            for event in result.plan_events:
                fh.write(json.dumps({
                    "iteration": event.iteration,
                    "trigger": event.trigger,
                    "chosen_size": event.chosen_size,
                    "l_curve": {str(k): v for k, v in event.l_curve.items()},
                    "v_curve": {str(k): v for k, v in event.v_curve.items()},
                }) + "\n")


def _run_once(cfg: dict[str, Any]) -> tuple[DecodeEngine, RunResult]:
    backend = build_backend(cfg)
    latency = build_latency(cfg)
    engine = DecodeEngine(backend, build_engine_config(cfg), latency)
    prompts = build_prompts(cfg, backend.vocab_size)
    workload = cfg["workload"]
    result = engine.run(prompts, workload["max_tokens"], batch_size=workload["batch_size"])
    return engine, result


def cmd_run(args: argparse.Namespace) -> int:
    cfg = apply_seed_override(load_config(args.config), args.seed_override)
    engine, result = _run_once(cfg)
    out_dir = Path(args.out_dir or cfg["output"]["dir"])
    _write_outputs(out_dir, cfg, engine, result, args.verbose)
    s = result.summary
    print(
        f"mode={s.mode} iterations={s.iterations} tokens={s.total_tokens} "
        f"time={s.total_time:.3f} tokens_per_sec={s.tokens_per_sec:.3f} "
        f"mean_accepted={s.mean_accepted:.3f}"
    )
    print(f"outputs written to {out_dir}")
    return 0


_AXES = ("batch", "mode", "prune_layer", "prune_topk")


def _apply_axis(cfg: dict[str, Any], axis: str, value: Any) -> dict[str, Any]:
    out = copy.deepcopy(cfg)
    if axis == "batch":
        out["workload"]["batch_size"] = value
    elif axis == "mode":
        out["engine"]["mode"] = value
    else:
        if not out["engine"]["prune"]:
            raise ConfigError(f"sweep.{axis}: engine.prune must be configured for this axis")
        key = "layer" if axis == "prune_layer" else "topk"
        out["engine"]["prune"][key] = value
    return out


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = apply_seed_override(load_config(args.config), args.seed_override)
    axes: list[str] = list(dict.fromkeys(args.axis))
    for axis in axes:
        if not cfg["sweep"].get(axis):
            raise ConfigError(f"sweep.{axis}: no values configured for this axis")
    rows = []
    for combo in itertools.product(*[cfg["sweep"][a] for a in axes]):
        run_cfg = cfg
        for axis, value in zip(axes, combo):
            run_cfg = _apply_axis(run_cfg, axis, value)
        _, result = _run_once(run_cfg)
        base_cfg = copy.deepcopy(run_cfg)
        base_cfg["engine"]["mode"] = "autoregressive"
        _, baseline = _run_once(base_cfg)
        s = result.summary
        speedup = baseline.summary.total_time / s.total_time if s.total_time > 0 else float("nan")
        row: dict[str, Any] = dict(zip(axes, combo))
        row.update({
            "mode": s.mode,
            "total_tokens": s.total_tokens,
            "total_time": s.total_time,
            "tokens_per_sec": s.tokens_per_sec,
            "mean_accepted": s.mean_accepted,
            "mean_prune_rate": s.mean_prune_rate,
            "baseline_time": baseline.summary.total_time,
            "speedup": speedup,
        })
        rows.append(row)
    print(f"sweep axes: {', '.join(axes)}")
    axis_header = " ".join(f"{a:>12}" for a in axes)
    print(
        f"{axis_header} {'mode':>14} {'tokens':>8} {'time':>10} "
        f"{'tok/s':>10} {'accept':>8} {'prune':>7} {'speedup':>8}"
    )
    for r in rows:
        axis_cells = " ".join(f"{r[a]!s:>12}" for a in axes)
        print(
            f"{axis_cells} {r['mode']:>14} {r['total_tokens']:>8} "
            f"{r['total_time']:>10.3f} {r['tokens_per_sec']:>10.3f} "
            f"{r['mean_accepted']:>8.3f} {r['mean_prune_rate']:>7.3f} {r['speedup']:>8.3f}"
        )
    out_dir = Path(args.out_dir or cfg["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep_path = out_dir / "sweep.csv"
    with sweep_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for r in rows:
            writer.writerow({
                k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()
            })
    print(f"wrote {sweep_path}")
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_all(seed=args.seed)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name}: {r.detail}")
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treedecode",
        description="Parallel decoding with dynamic token trees and early pruning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="decode a workload under one engine mode")
    run.add_argument("--config", required=True, help="JSON config file")
    run.add_argument("--out-dir", default=None, help="output directory (overrides config)")
    run.add_argument("--seed-override", type=int, default=None, help="re-seed backend and workload")
    run.add_argument("--verbose", action="store_true", help="also dump estimator and plan internals")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one config axis across its configured values")
    sweep.add_argument("--config", required=True, help="JSON config file")
    sweep.add_argument(
        "--axis", required=True, action="append", choices=_AXES,
        help="sweep axis to vary; repeat the flag to cross two axes into a grid",
    )
    sweep.add_argument("--out-dir", default=None, help="output directory (overrides config)")
    sweep.add_argument("--seed-override", type=int, default=None)
    sweep.set_defaults(func=cmd_sweep)

    selftest = sub.add_parser("selftest", help="run the built-in oracle suites")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
