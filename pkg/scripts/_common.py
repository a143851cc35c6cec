"""Shared plumbing for the experiment scripts: run a config, print the
aggregate table, emit the per-stage plot series."""
import argparse

from glodist.cli import emit_plots, run_experiment
from glodist.config import parse_config


def standard_args(description: str, default_output: str) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--output", default=default_output, help="results directory")
    ap.add_argument("--seeds", type=int, default=10, help="number of seeds (from 0)")
    ap.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    return ap.parse_args()


def print_table(rows) -> None:
    width = max(len(r["variant"]) for r in rows)
    print(f"{'variant':<{width}}  {'acc':>15}  {'fgt':>15}  seeds")
    for r in rows:
        if r["seeds"] == 0:
            print(f"{r['variant']:<{width}}  all seeds failed")
            continue
        acc = f"{r['acc_mean']:.4f}±{r['acc_std']:.4f}"
        fgt = f"{r['fgt_mean']:.4f}±{r['fgt_std']:.4f}"
        print(f"{r['variant']:<{width}}  {acc:>15}  {fgt:>15}  {r['seeds']}")


def run_and_report(config_template: str, args: argparse.Namespace) -> int:
    """config_template must contain a {seeds} placeholder."""
    cfg = parse_config(config_template.format(seeds=list(range(args.seeds))))
    summary = run_experiment(cfg, output_dir=args.output, jobs=args.jobs)
    print_table(summary["rows"])
    for path in emit_plots(summary["output_dir"]):
        print(f"wrote {path}")
    print(f"wrote {summary['aggregate_csv']}")
    return 0 if all(r["seeds"] for r in summary["rows"]) else 3
