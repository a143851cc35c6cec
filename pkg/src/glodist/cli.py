"""Experiment runner CLI.

Subcommands:
  run      - execute the (variant x seed) grid of a config file, writing one
             JSON record per trial plus an aggregate CSV
  validate - parse a config and report the resolved grid without running
  plots    - turn run records into per-variant CSV series of classes-seen
             versus the accuracy / forgetting summaries

Relative output directories resolve under $GLODIST_OUTPUT_ROOT when that is
set. Outputs are deterministic: the same config produces byte-identical
records and aggregate CSV on every run of the same build.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import os
import statistics
import sys
from pathlib import Path

from .config import (
    ExperimentConfig,
    SCHEMA_VERSION,
    load_config,
    parse_config,
    resolve_variant,
    serialize_config,
)
from .errors import ConfigError
from .trainer import MethodVariant, run_sequence

OUTPUT_ROOT_ENV = "GLODIST_OUTPUT_ROOT"


def _output_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    out = Path(override) if override else Path(cfg.output_dir)
    if not out.is_absolute():
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            out = Path(root) / out
    return out


def run_trial(cfg: ExperimentConfig, variant: MethodVariant, seed: int) -> dict:
    """One grid cell. Failures are recorded, not raised, so a bad trial
    cannot take down the rest of the grid."""
    record = {
        "schema": SCHEMA_VERSION,
        "variant": variant.label,
        "name": variant.name,
        "references": sorted(variant.reference_set),
        "sampling": variant.sampling,
        "balancing": variant.balancing,
        "seed": seed,
    }
    try:
        outcome = run_sequence(cfg, variant, seed)
    except Exception as e:  # noqa: BLE001 - record-and-continue policy
        record.update({"status": "failed", "error": f"{type(e).__name__}: {e}"})
        return record
    from .metrics import acc, fgt

    record.update(
        {
            "status": "ok",
            "acc": acc(outcome.matrix),
            "fgt": fgt(outcome.matrix),
            "matrix": [
                [r, s, outcome.matrix.entries[(r, s)]]
                for (r, s) in sorted(outcome.matrix.entries, key=lambda k: (k[1], k[0]))
            ],
            "stages": outcome.stage_records(),
        }
    )
    return record


def _trial_cell(args):
    cfg_text, vc_index, seed = args
    cfg = parse_config(cfg_text)
    variant = MethodVariant.from_config(cfg.variants[vc_index], cfg)
    return run_trial(cfg, variant, seed)


def aggregate_rows(cfg: ExperimentConfig, records: list[dict]) -> list[dict]:
    rows = []
    for vc in cfg.variants:
        label = resolve_variant(vc, cfg).label
        ok = [r for r in records if r["variant"] == label and r["status"] == "ok"]
        row = {"schema": SCHEMA_VERSION, "variant": label, "seeds": len(ok)}
        if ok:
            accs = [r["acc"] for r in ok]
            fgts = [r["fgt"] for r in ok]
            row.update(
                acc_mean=statistics.fmean(accs),
                acc_std=statistics.stdev(accs) if len(accs) > 1 else 0.0,
                fgt_mean=statistics.fmean(fgts),
                fgt_std=statistics.stdev(fgts) if len(fgts) > 1 else 0.0,
            )
        else:
            row.update(acc_mean="", acc_std="", fgt_mean="", fgt_std="")
        rows.append(row)
    return rows


_AGG_FIELDS = ["schema", "variant", "seeds", "acc_mean", "acc_std", "fgt_mean", "fgt_std"]


def _csv_text(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, output_dir: str | None = None, jobs: int = 1) -> dict:
    """Execute the grid; returns paths and aggregate rows."""
    out = _output_dir(cfg, output_dir)
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    cells = [
        (vi, seed) for vi in range(len(cfg.variants)) for seed in cfg.seeds
    ]
    if jobs > 1:
        cfg_text = serialize_config(cfg)
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_trial_cell, [(cfg_text, vi, s) for vi, s in cells]))
    else:
        records = []
        for vi, seed in cells:
            variant = MethodVariant.from_config(cfg.variants[vi], cfg)
            records.append(run_trial(cfg, variant, seed))

    for rec in records:
        path = runs_dir / f"{_slug(rec['variant'])}_seed{rec['seed']}.json"
        path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    rows = aggregate_rows(cfg, records)
    agg_path = out / "aggregate.csv"
    agg_path.write_text(_csv_text(rows, _AGG_FIELDS))
    (out / "config.yaml").write_text(serialize_config(cfg))
    return {
        "output_dir": str(out),
        "aggregate_csv": str(agg_path),
        "records": records,
        "rows": rows,
    }


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "-" for ch in label)


_PLOT_FIELDS = ["schema", "variant", "classes_seen", "acc_mean", "acc_std", "fgt_mean", "fgt_std"]


def emit_plots(results_dir, out_dir=None) -> list[str]:
    """Per-variant series of the summaries after each stage >= 2, averaged
    over seeds; one CSV per variant under <results>/plots/."""
    results_dir = Path(results_dir)
    runs = sorted((results_dir / "runs").glob("*.json"))
    if not runs:
        raise ConfigError(f"no run records under {results_dir / 'runs'}")
    by_variant: dict[str, list[dict]] = {}
    for path in runs:
        rec = json.loads(path.read_text())
        if rec.get("status") == "ok":
            by_variant.setdefault(rec["variant"], []).append(rec)
    out_dir = Path(out_dir) if out_dir else results_dir / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for label in sorted(by_variant):
        recs = by_variant[label]
        stages = [s for s in recs[0]["stages"] if s["acc"] is not None]
        rows = []
        for i, stage in enumerate(stages):
            accs = [r["stages"][stage["stage"] - 1]["acc"] for r in recs]
            fgts = [r["stages"][stage["stage"] - 1]["fgt"] for r in recs]
            rows.append(
                {
                    "schema": SCHEMA_VERSION,
                    "variant": label,
                    "classes_seen": stage["classes_seen"],
                    "acc_mean": statistics.fmean(accs),
                    "acc_std": statistics.stdev(accs) if len(accs) > 1 else 0.0,
                    "fgt_mean": statistics.fmean(fgts),
                    "fgt_std": statistics.stdev(fgts) if len(fgts) > 1 else 0.0,
                }
            )
        path = out_dir / f"{_slug(label)}.csv"
        path.write_text(_csv_text(rows, _PLOT_FIELDS))
        written.append(str(path))
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="glodist",
        description="class-incremental learning experiments on synthetic task streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the (variant x seed) grid of a config")
    p_run.add_argument("--config", required=True, help="YAML config path")
    p_run.add_argument("--output", default=None, help="output directory override")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel trial workers")

    p_val = sub.add_parser("validate", help="check a config and print the resolved grid")
    p_val.add_argument("--config", required=True, help="YAML config path")

    p_plots = sub.add_parser("plots", help="emit per-variant series CSVs from run records")
    p_plots.add_argument("--results", required=True, help="directory written by `run`")
    p_plots.add_argument("--output", default=None, help="plots directory override")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            summary = run_experiment(cfg, output_dir=args.output, jobs=args.jobs)
            print(f"wrote {summary['aggregate_csv']}")
            empty = [row["variant"] for row in summary["rows"] if row["seeds"] == 0]
            if empty:
                print(f"error: no successful seeds for: {', '.join(empty)}", file=sys.stderr)
                return 3
            failed = sum(1 for r in summary["records"] if r["status"] != "ok")
            if failed:
                print(f"warning: {failed} trial(s) failed; see run records", file=sys.stderr)
            return 0
        if args.command == "validate":
            cfg = load_config(args.config)
            for vc in cfg.variants:
                v = MethodVariant.from_config(vc, cfg)
                refs = ",".join(sorted(v.reference_set)) or "-"
                print(
                    f"{v.label}: name={v.name} references={refs} "
                    f"sampling={v.sampling} balancing={v.balancing}"
                )
            print(f"seeds: {cfg.seeds}")
            print(f"tasks: {cfg.num_tasks} x {cfg.task.task_size} classes")
            print("config ok")
            return 0
        if args.command == "plots":
            for path in emit_plots(args.results, args.output):
                print(f"wrote {path}")
            return 0
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
