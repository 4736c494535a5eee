"""Compress encoder classifiers to a target byte size.

Genetic search over a bounded architecture grid picks a student model
that maximizes forward-pass GFLOPs while hitting a size budget; the
student is then trained by knowledge distillation from a fixed teacher
using a temperature-softened soft cross-entropy loss.
"""

from .archspace import (
    ArchConfig,
    SearchSpace,
    default_table1,
    pretrained_reference,
    validate,
)
from .estimators import FlopsEstimate, SizeEstimate, forward_flops, model_size, param_count
from .gasearch import Chromosome, GaParams, GaResult, fitness, search

__all__ = [
    "ArchConfig", "SearchSpace", "default_table1", "pretrained_reference", "validate",
    "SizeEstimate", "FlopsEstimate", "param_count", "model_size", "forward_flops",
    "Chromosome", "GaParams", "GaResult", "fitness", "search",
]

__version__ = "0.1.0"
