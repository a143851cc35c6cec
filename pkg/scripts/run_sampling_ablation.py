"""How should the unlabeled stream be sampled?

Global distillation with no external data, with uniformly sampled external
data, with previous-model-confidence sampling only, and with the combined
scheme that reserves a share for unfiltered draws.
"""
import sys

from _common import run_and_report, standard_args

CONFIG = """
seeds: {seeds}
variants:
  - {{name: gd, sampling: none, label: ext-none}}
  - {{name: gd, sampling: random_only, label: ext-random}}
  - {{name: gd, sampling: pred_only, label: ext-pred}}
  - {{name: gd, sampling: combined, label: ext-combined}}
"""

if __name__ == "__main__":
    args = standard_args(__doc__, "out/sampling_ablation")
    sys.exit(run_and_report(CONFIG, args))
