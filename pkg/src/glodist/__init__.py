"""Class-incremental learning with distillation from reference models and an
unlabeled external stream, on synthetic desk-scale benchmarks."""

__version__ = "0.1.0"

from .config import ExperimentConfig, parse_config  # noqa: F401
from .trainer import MethodVariant, run_sequence  # noqa: F401
