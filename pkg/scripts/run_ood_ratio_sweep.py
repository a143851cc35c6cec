"""Sweep the share of the external budget reserved for unfiltered draws.

At ratio 1.0 every external point is taken straight from the stream; at 0.0
every point must win a previous-model confidence contest. The default
benchmark sits at 0.7.
"""
import sys

from _common import run_and_report, standard_args

RATIOS = [0.0, 0.3, 0.5, 0.7, 0.9, 1.0]

CONFIG = "seeds: {seeds}\nvariants:\n" + "".join(
    f"  - {{{{name: gd, sampling: combined, ood_ratio: {r}, label: ratio-{r}}}}}\n"
    for r in RATIOS
)

if __name__ == "__main__":
    args = standard_args(__doc__, "out/ood_ratio_sweep")
    sys.exit(run_and_report(CONFIG, args))
