"""Which reference models matter?

Global distillation with external data, distilling from the previous model
alone, previous plus the current-task teacher, and the full set including
their ensemble.
"""
import sys

from _common import run_and_report, standard_args

CONFIG = """
seeds: {seeds}
variants:
  - {{name: gd, references: [P], sampling: combined, label: refs-P}}
  - {{name: gd, references: [P, C], sampling: combined, label: refs-PC}}
  - {{name: gd, references: [P, C, Q], sampling: combined, label: refs-PCQ}}
"""

if __name__ == "__main__":
    args = standard_args(__doc__, "out/reference_ablation")
    sys.exit(run_and_report(CONFIG, args))
