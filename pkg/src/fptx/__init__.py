"""Transformer forward passes under simulated low-precision arithmetic.

Subpackages by theme: ``fparith`` (the rounding model), ``tensor`` (norms
and linear-algebra helpers), ``net`` (the architecture evaluated under a
precision context), ``jacobians`` and ``conditioning`` (derivatives,
condition numbers, amplification factors), ``errbounds`` (first-order
rounding-error bounds and measurement), ``harness`` (experiments and CSV
output), ``cli`` (the ``fptx`` command).
"""

from .fparith import Mode, PrecisionSpec, gamma, round_to_precision, unit_roundoff
from .net import DeepConfig, NormPlacement, NormVariant, TransformerConfig

__all__ = [
    "Mode",
    "PrecisionSpec",
    "gamma",
    "round_to_precision",
    "unit_roundoff",
    "DeepConfig",
    "NormPlacement",
    "NormVariant",
    "TransformerConfig",
]

__version__ = "0.1.0"
