"""Headline comparison on the default synthetic benchmark.

Runs the oracle (retrained on everything kept so far), the naive sequential
baseline, global distillation without external data, and global distillation
with confidence-sampled external data.
"""
import sys

from _common import run_and_report, standard_args

CONFIG = """
seeds: {seeds}
variants:
  - {{name: oracle}}
  - {{name: baseline, balancing: none}}
  - {{name: gd, sampling: none, label: gd}}
  - {{name: gd, sampling: combined, label: gd+ext}}
"""

if __name__ == "__main__":
    args = standard_args(__doc__, "out/benchmark")
    sys.exit(run_and_report(CONFIG, args))
