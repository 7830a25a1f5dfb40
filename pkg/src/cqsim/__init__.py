"""Time-slotted crossbar switch simulator and buffer-overflow analytics.

Subpackages cover the switch fabrics (single-stage crosspoint-queued,
chained two-stage, pooled, and an output-queued reference), the arrival
process generators that drive them, closed-form overflow-exponent math,
and the measurement plumbing shared by all of them.
"""

from .core import Cell, ConfigError, RngStream, SwitchConfig, derive_stream

__all__ = [
    "Cell",
    "ConfigError",
    "RngStream",
    "SwitchConfig",
    "derive_stream",
]

__version__ = "0.1.0"
