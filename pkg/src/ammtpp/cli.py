"""Command line entry point: ``ammtpp <command> [options]``.

Commands
--------
ingest    parse raw protocol logs into unified JSON lines plus manifest.json
stats     descriptive statistics of a raw dataset (CSV and JSON)
replay    replay reserve deltas of a unified file through a constant-product pool
simulate  simulate a Hawkes process and write the events and a summary
train     train one model (or a grid with --grid) from an experiment config
eval      evaluate a checkpoint on unified data
report    aggregate per-seed metrics of a grid into mean and std per cell

Exit codes: 0 success, 1 invalid input or usage, 2 failure while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__

logger = logging.getLogger("ammtpp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_json(path, obj):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _need_dir(path, flag):
    if not os.path.isdir(path):
        raise UsageError(f"{flag}: directory not found: {path}")


def _need_file(path, flag):
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: file not found: {path}")


# -- commands: each returns a zero-argument runner after validating its inputs --

def cmd_ingest(args):
    from .ingest import export_unified, scan_dataset

    _need_dir(args.root, "--root")

    def run():
        scan = scan_dataset(args.root, strict=args.strict)
        export_unified(scan, args.out)
        _write_json(os.path.join(args.out, "resolved_config.json"),
                    {"command": "ingest", "root": args.root, "out": args.out,
                     "strict": args.strict})
        m = scan.manifest
        print(f"{len(scan.sequences)} pools, {m['total_events']} records, "
              f"{len(m['errors'])} unreadable files -> {args.out}")
    return run


def cmd_stats(args):
    from .ingest import scan_dataset
    from .stats import analyze_scan

    _need_dir(args.root, "--root")

    def run():
        scan = scan_dataset(args.root)
        analyze_scan(scan, args.out, bin_size=args.bin_size, trigger_window=args.trigger_window,
                     trigger_q=args.trigger_q)
        _write_json(os.path.join(args.out, "resolved_config.json"),
                    {"command": "stats", **{k: v for k, v in vars(args).items()
                                            if k not in ("func", "command")}})
        print(f"statistics written to {args.out}")
    return run


def cmd_replay(args):
    from .amm import PoolState, replay_jsonl

    _need_file(args.events, "--events")
    pool = PoolState(args.reserve_x, args.reserve_y)

    def run():
        n = replay_jsonl(args.events, pool, args.out, scale=args.scale)
        print(f"replayed {n} events -> {args.out}")
    return run


def cmd_simulate(args):
    from .events import write_jsonl
    from .tpp import HawkesParams, from_checkpoint, simulate_thinning

    if args.checkpoint:
        _need_file(args.checkpoint, "--checkpoint")
        model = from_checkpoint(args.checkpoint)
    else:
        try:
            model = HawkesParams.univariate(args.mu, args.alpha, args.beta)
        except ValueError as exc:
            raise UsageError(str(exc))
    if args.horizon <= 0 or args.n_sequences < 1:
        raise UsageError("--horizon must be positive and --n-sequences at least 1")

    def run():
        seeds = np.random.SeedSequence(args.seed).spawn(args.n_sequences)
        counts, gaps = [], []
        for i, ss in enumerate(seeds):
            seq = simulate_thinning(model, 0.0, args.horizon, seed=ss.generate_state(1)[0],
                                    quantize=not args.no_quantize, asset_id=f"sim-{i:04d}")
            write_jsonl(os.path.join(args.out, "events", f"sim-{i:04d}.jsonl"), seq)
            counts.append(len(seq))
            gaps.extend(seq.gaps.tolist())
        summary = {"n_sequences": args.n_sequences, "n_events": int(sum(counts)),
                   "mean_events_per_sequence": float(np.mean(counts)),
                   "event_rate": float(sum(counts) / (args.n_sequences * args.horizon)),
                   "mean_gap": float(np.mean(gaps)) if gaps else None}
        _write_json(os.path.join(args.out, "metrics.json"), summary)
        _write_json(os.path.join(args.out, "resolved_config.json"),
                    {"command": "simulate", **{k: v for k, v in vars(args).items()
                                               if k not in ("func", "command")}})
        print(f"{summary['n_events']} events in {args.n_sequences} sequences -> {args.out}")
    return run


def _config_overrides(args):
    ov = {}
    if args.seed is not None:
        ov.setdefault("train", {})["seeds"] = [args.seed]
    if args.lr is not None:
        ov.setdefault("train", {})["learning_rate"] = args.lr
    if args.max_epochs is not None:
        ov.setdefault("train", {})["max_epochs"] = args.max_epochs
    if args.family is not None:
        ov.setdefault("model", {})["family"] = args.family
    if args.objective is not None:
        ov.setdefault("objective", {})["variant"] = args.objective
    if args.data is not None:
        ov.setdefault("data", {})["root"] = args.data
    if args.output_dir is not None:
        ov["output_dir"] = args.output_dir
    return ov


def cmd_train(args):
    from .config import (ConfigError, load_config, load_split, model_factory, otd_config,
                         train_config, write_snapshot)
    from .evaluation import evaluate
    from .train import run_benchmark, select_learning_rate, train_model

    try:
        cfg = load_config(args.config, _config_overrides(args))
    except ConfigError as exc:
        raise UsageError(str(exc))
    if args.grid and args.select_lr:
        raise UsageError("--grid and --select-lr are exclusive")

    def run():
        out = cfg["output_dir"]
        write_snapshot(cfg, out)
        split = load_split(cfg)
        tcfg = train_config(cfg)
        ocfg = otd_config(cfg)
        if args.grid:
            families = cfg["grid"]["families"] or [cfg["model"]["family"]]
            objectives = cfg["grid"]["objectives"] or [cfg["objective"]["variant"]]
            models = {f: model_factory(cfg, f) for f in families}
            report = run_benchmark(models, objectives, split, tcfg, eval_config=ocfg, out_dir=out)
            report.write_json(os.path.join(out, "grid.json"))
            write_grid_csv(os.path.join(out, "grid.json"), os.path.join(out, "grid.csv"))
            n_fail = sum("error" in r for c in report.cells.values() for r in c["runs"])
            print(f"grid of {len(report.cells)} cells written to {out} ({n_fail} failed runs)")
            return
        seed = tcfg.seeds[0]
        objective = cfg["objective"]["variant"]
        if objective == "fixed_sigma":
            from .loss import build_objective
            objective = build_objective("fixed_sigma", cfg["objective"]["sigma"])
        if args.select_lr:
            best, scores = select_learning_rate(model_factory(cfg), split, objective, tcfg, seed)
            _write_json(os.path.join(out, "lr_selection.json"),
                        {"best": best, "scores": {repr(k): v for k, v in scores.items()}})
            tcfg = train_config(cfg, learning_rate=best)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model, trace = train_model(model_factory(cfg)(), split, objective, tcfg, seed,
                                       trace_path=os.path.join(out, "trace.csv"))
            metrics = evaluate(model, list(split.test), ocfg)
        model.save(os.path.join(out, "checkpoint.json"))
        with open(os.path.join(out, "metrics.json"), "w") as fh:
            fh.write(metrics.to_json())
        _write_json(os.path.join(out, "report.json"),
                    {"seed": seed, "best_epoch": trace.best_epoch, "epochs_run": trace.epochs_run,
                     "best_val_nll": trace.best_val_nll, "sigma": trace.objective.sigma.tolist(),
                     "split_counts": list(split.counts), "metrics": metrics.to_dict()})
        print(f"best epoch {trace.best_epoch}: accuracy {metrics.type_accuracy:.4f}, "
              f"RMSE {metrics.time_rmse:.3f} -> {out}")
    return run


def cmd_eval(args):
    from .events import load_unified, window_split
    from .evaluation import OtdConfig, evaluate
    from .tpp import from_checkpoint
    from .validation import check_horizons

    _need_file(args.checkpoint, "--checkpoint")
    _need_dir(args.data, "--data")
    try:
        cfg = OtdConfig(delete_cost=args.otd_cost, horizons=check_horizons(args.horizons),
                        rollout=args.rollout, n_draws=args.n_draws, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))

    def run():
        model = from_checkpoint(args.checkpoint)
        seqs = []
        for s in load_unified(args.data):
            seqs.extend(w for w in window_split(s, args.max_len) if len(w) >= 2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            metrics = evaluate(model, seqs, cfg)
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w") as fh:
            fh.write(metrics.to_json())
        flat = metrics.flat()
        with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["checkpoint"] + list(flat))
            w.writerow([args.checkpoint] + [repr(v) for v in flat.values()])
        _write_json(os.path.join(args.out, "resolved_config.json"),
                    {"command": "eval", **{k: v for k, v in vars(args).items()
                                           if k not in ("func", "command")}})
        print(json.dumps(flat, sort_keys=True))
    return run


def aggregate_grid(grid_path):
    """Recompute per-cell mean and population std from the per-seed metric files."""
    with open(grid_path) as fh:
        grid = json.load(fh)
    base = os.path.dirname(os.path.abspath(grid_path))
    rows = []
    for key in sorted(grid["cells"]):
        cell = grid["cells"][key]
        per_seed = []
        for run in cell["runs"]:
            if "metrics_path" in run:
                with open(os.path.join(base, run["metrics_path"])) as fh:
                    m = json.load(fh)
                flat = {"type_accuracy": m["type_accuracy"], "time_rmse": m["time_rmse"]}
                flat.update({f"otd_h{h}": v for h, v in sorted(m["otd"].items(), key=lambda kv: int(kv[0]))})
                per_seed.append(flat)
        row = {"model": cell["model"], "objective": cell["objective"],
               "n_runs": len(cell["runs"]), "n_ok": len(per_seed)}
        if per_seed:
            for name in per_seed[0]:
                vals = np.array([p[name] for p in per_seed], dtype=float)
                row[f"{name}_mean"] = float(vals.mean())
                row[f"{name}_std"] = float(vals.std(ddof=0))
                row[name] = f"{vals.mean():.4f} ± {vals.std(ddof=0):.4f}"
        rows.append(row)
    return rows


def write_grid_csv(grid_path, out_csv):
    rows = aggregate_grid(grid_path)
    cols = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows


def cmd_report(args):
    _need_file(args.grid, "--grid")
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.grid)), "grid.csv")

    def run():
        rows = write_grid_csv(args.grid, out)
        print(f"{len(rows)} cells -> {out}")
    return run


def build_parser():
    p = _Parser(prog="ammtpp", description="Marked TPP toolkit for AMM event streams.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("ingest", help="raw logs -> unified JSON lines")
    s.add_argument("--root", required=True, help="directory of <protocol>/<pool>.json[l] files")
    s.add_argument("--out", required=True)
    s.add_argument("--strict", action="store_true", help="abort on the first malformed record")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("stats", help="descriptive statistics of a raw dataset")
    s.add_argument("--root", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bin-size", type=int, default=10_000)
    s.add_argument("--trigger-window", type=int, default=10)
    s.add_argument("--trigger-q", type=float, default=95.0)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("replay", help="replay reserve deltas through a constant-product pool")
    s.add_argument("--events", required=True, help="unified JSON-lines file with dx/dy fields")
    s.add_argument("--reserve-x", type=float, required=True)
    s.add_argument("--reserve-y", type=float, required=True)
    s.add_argument("--scale", type=float, default=1.0, help="divide raw amounts by this")
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("simulate", help="simulate a Hawkes process by thinning")
    s.add_argument("--checkpoint", help="model checkpoint; otherwise univariate --mu/--alpha/--beta")
    s.add_argument("--mu", type=float, default=0.5)
    s.add_argument("--alpha", type=float, default=0.8)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--horizon", type=float, default=1000.0)
    s.add_argument("--n-sequences", type=int, default=1)
    s.add_argument("--no-quantize", action="store_true", help="keep real-valued times")
    s.add_argument("--seed", type=int, default=2019)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train from an experiment config")
    s.add_argument("--config", help="experiment config JSON")
    s.add_argument("--seed", type=int, help="single seed (overrides train.seeds)")
    s.add_argument("--grid", action="store_true", help="run families x objectives x seeds")
    s.add_argument("--select-lr", action="store_true", help="pick the learning rate from the grid")
    s.add_argument("--lr", type=float)
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--family", choices=["hawkes", "rmtpp", "lognormmix"])
    s.add_argument("--objective", choices=["nll", "uwm", "uw_nll", "uw_event_mse", "fixed_sigma"])
    s.add_argument("--data", help="data root (overrides data.root)")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="unified data root")
    s.add_argument("--horizons", default="3,5,7,9,11")
    s.add_argument("--otd-cost", type=float, default=1.0)
    s.add_argument("--rollout", choices=["deterministic", "sampled"], default="deterministic")
    s.add_argument("--n-draws", type=int, default=10)
    s.add_argument("--seed", type=int, default=2019)
    s.add_argument("--max-len", type=int, default=300)
    s.add_argument("--out", default="eval_out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="aggregate a grid into mean and std per cell")
    s.add_argument("--grid", required=True, help="grid.json written by train --grid")
    s.add_argument("--out", help="output CSV (default: grid.csv next to grid.json)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        runner = args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        runner()
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("failure", exc_info=True)
        print(f"ammtpp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
