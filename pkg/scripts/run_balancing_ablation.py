"""Effect of the post-training rebalancing step.

Global distillation with external data, ending each stage with no
rebalancing, with the class-frequency-weighted fine-tune of the heads, or
with a fine-tune on a balanced subset.
"""
import sys

from _common import run_and_report, standard_args

CONFIG = """
seeds: {seeds}
variants:
  - {{name: gd, sampling: combined, balancing: none, label: ft-none}}
  - {{name: gd, sampling: combined, balancing: ft_dw, label: ft-dw}}
  - {{name: gd, sampling: combined, balancing: ft_dset, label: ft-dset}}
"""

if __name__ == "__main__":
    args = standard_args(__doc__, "out/balancing_ablation")
    sys.exit(run_and_report(CONFIG, args))
